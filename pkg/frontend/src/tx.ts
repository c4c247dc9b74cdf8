/**
 * Record operations and signed transactions.
 *
 * Field maps here must stay byte-identical to the node's: the signature
 * covers canonical_encode({sender, nonce, op, timestamp}) and the tx hash is
 * the SHA-256 of the full encoding with the signature folded in.
 */

import { bytesToHex, hexToBytes } from '@noble/hashes/utils.js';
import { sha256 } from '@noble/hashes/sha2.js';

import { canonicalEncode, type ValueMap } from './encoding';
import { accountIdFor, signPayload, type KeyPair } from './keys';

export type RecordOp =
  | { kind: 'RegisterStudent'; studentId: string; name: string; program: string }
  | { kind: 'RegisterCourse'; courseId: string; title: string; term: string; ownerStaffId: string }
  | { kind: 'UpdateProfile'; studentId: string; field: string; value: string }
  | { kind: 'UpsertGrade'; studentId: string; courseId: string; term: string; score: number; letter: string }
  | { kind: 'AttachFile'; studentId: string; courseId: string; cid: string; mediaLabel: string; sizeBytes: number }
  | { kind: 'AuditRepair'; table: string; rowKey: string; field: string; oldValue: string; newValue: string; auditId: string };

export function opFieldMap(op: RecordOp): ValueMap {
  switch (op.kind) {
    case 'RegisterStudent':
      return { kind: op.kind, studentId: op.studentId, name: op.name, program: op.program };
    case 'RegisterCourse':
      return {
        kind: op.kind,
        courseId: op.courseId,
        title: op.title,
        term: op.term,
        ownerStaffId: op.ownerStaffId,
      };
    case 'UpdateProfile':
      return { kind: op.kind, studentId: op.studentId, field: op.field, value: op.value };
    case 'UpsertGrade':
      return {
        kind: op.kind,
        studentId: op.studentId,
        courseId: op.courseId,
        term: op.term,
        score: op.score,
        letter: op.letter,
      };
    case 'AttachFile':
      // cid travels as hex in JSON but is 32 raw bytes in the encoding
      return {
        kind: op.kind,
        studentId: op.studentId,
        courseId: op.courseId,
        cid: hexToBytes(op.cid),
        mediaLabel: op.mediaLabel,
        sizeBytes: op.sizeBytes,
      };
    case 'AuditRepair':
      return {
        kind: op.kind,
        table: op.table,
        rowKey: op.rowKey,
        field: op.field,
        oldValue: op.oldValue,
        newValue: op.newValue,
        auditId: op.auditId,
      };
  }
}

/** Parse an op out of its JSON wire shape (gateway and vector-file form). */
export function opFromWire(data: Record<string, unknown>): RecordOp {
  const kind = data.kind;
  const s = (k: string) => String(data[k]);
  const n = (k: string) => Number(data[k]);
  switch (kind) {
    case 'RegisterStudent':
      return { kind, studentId: s('studentId'), name: s('name'), program: s('program') };
    case 'RegisterCourse':
      return { kind, courseId: s('courseId'), title: s('title'), term: s('term'), ownerStaffId: s('ownerStaffId') };
    case 'UpdateProfile':
      return { kind, studentId: s('studentId'), field: s('field'), value: s('value') };
    case 'UpsertGrade':
      return { kind, studentId: s('studentId'), courseId: s('courseId'), term: s('term'), score: n('score'), letter: s('letter') };
    case 'AttachFile':
      return { kind, studentId: s('studentId'), courseId: s('courseId'), cid: s('cid'), mediaLabel: s('mediaLabel'), sizeBytes: n('sizeBytes') };
    case 'AuditRepair':
      return { kind, table: s('table'), rowKey: s('rowKey'), field: s('field'), oldValue: s('oldValue'), newValue: s('newValue'), auditId: s('auditId') };
    default:
      throw new Error(`unknown record op kind ${String(kind)}`);
  }
}

export interface SignedTx {
  sender: string;
  nonce: number;
  op: RecordOp;
  timestamp: number;
  signatureHex: string;
  txHex: string;
  txHashHex: string;
}

export function signingPayloadMap(
  sender: Uint8Array,
  nonce: number,
  op: RecordOp,
  timestamp: number,
): ValueMap {
  return { sender, nonce, op: opFieldMap(op), timestamp };
}

export function signingPayload(
  sender: Uint8Array,
  nonce: number,
  op: RecordOp,
  timestamp: number,
): Uint8Array {
  return canonicalEncode(signingPayloadMap(sender, nonce, op, timestamp));
}

export function makeTransaction(
  key: KeyPair,
  nonce: number,
  op: RecordOp,
  timestamp: number,
): SignedTx {
  const sender = accountIdFor(key.publicKey);
  const payload = signingPayload(sender, nonce, op, timestamp);
  const signature = signPayload(key, payload);
  const full = signingPayloadMap(sender, nonce, op, timestamp);
  full.signature = signature;
  const encoded = canonicalEncode(full);
  return {
    sender: bytesToHex(sender),
    nonce,
    op,
    timestamp,
    signatureHex: bytesToHex(signature),
    txHex: bytesToHex(encoded),
    txHashHex: bytesToHex(sha256(encoded)),
  };
}
