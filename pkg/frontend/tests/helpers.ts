/**
 * Test doubles. FakeGateway speaks the same JSON dialect as the real
 * gateway, backed by in-memory tables, and keeps a full intercept log of
 * every request so tests can assert invariants over the wire traffic (not
 * just over what the pages happened to render). inspectTx parses the
 * canonical encoding far enough to check a transaction's signature the way
 * the server does.
 */

import { sha256 } from '@noble/hashes/sha2.js';
import { bytesToHex, concatBytes, hexToBytes } from '@noble/hashes/utils.js';

import { utf8 } from '../src/encoding';
import { KeyPair, accountIdHex, verifySignature } from '../src/keys';

// -- canonical-encoding inspection ---------------------------------------------

const DECODER = new TextDecoder();

function be32(n: number): Uint8Array {
  const out = new Uint8Array(4);
  new DataView(out.buffer).setUint32(0, n);
  return out;
}

/** Split a canonical map encoding into its (key, raw value bytes) frames. */
export function parseFrames(data: Uint8Array): [string, Uint8Array][] {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const frames: [string, Uint8Array][] = [];
  let off = 0;
  while (off < data.length) {
    const klen = view.getUint32(off);
    off += 4;
    const key = DECODER.decode(data.subarray(off, off + klen));
    off += klen;
    const vlen = view.getUint32(off);
    off += 4;
    frames.push([key, data.subarray(off, off + vlen)]);
    off += vlen;
  }
  if (off !== data.length) throw new Error('trailing bytes after map frames');
  return frames;
}

export interface InspectedTx {
  senderHex: string;
  nonce: number;
  signature: Uint8Array;
  /** Map re-framed without the signature entry: the signing payload. */
  payload: Uint8Array;
  opKind: string;
  op: Map<string, Uint8Array>;
  txHashHex: string;
}

export function inspectTx(txHex: string): InspectedTx {
  const raw = hexToBytes(txHex);
  const frames = parseFrames(raw);
  const byKey = new Map(frames);
  const signatureAscii = byKey.get('signature');
  const senderAscii = byKey.get('sender');
  const nonceBytes = byKey.get('nonce');
  const opBytes = byKey.get('op');
  if (!signatureAscii || !senderAscii || !nonceBytes || !opBytes) {
    throw new Error('transaction is missing a required entry');
  }
  // bytes values encode as lowercase hex ASCII inside the frames
  const signature = hexToBytes(DECODER.decode(signatureAscii));
  const sender = DECODER.decode(senderAscii);
  const parts: Uint8Array[] = [];
  for (const [key, value] of frames) {
    if (key === 'signature') continue;
    const kb = utf8(key);
    parts.push(be32(kb.length), kb, be32(value.length), value);
  }
  const op = new Map(parseFrames(opBytes));
  const kind = op.get('kind');
  return {
    senderHex: sender,
    nonce: Number(DECODER.decode(nonceBytes)),
    signature,
    payload: concatBytes(...parts),
    opKind: kind ? DECODER.decode(kind) : '',
    op,
    txHashHex: bytesToHex(sha256(raw)),
  };
}

export function opText(tx: InspectedTx, field: string): string {
  const raw = tx.op.get(field);
  return raw ? DECODER.decode(raw) : '';
}

// -- the fake gateway ------------------------------------------------------------

interface FakeAccount {
  id: string;
  label: string;
  password: string;
  role: string;
  subjectId: string;
  displayName: string;
  publicKey: Uint8Array;
  nonce: number;
}

export interface LoggedRequest {
  method: string;
  path: string;
  headers: Record<string, string>;
  body: any;
}

interface GradeRow {
  studentId: string;
  courseId: string;
  term: string;
  score: number;
  letter: string;
  attachmentCid: string;
}

function jsonResponse(status: number, body: unknown): Response {
  return {
    ok: status < 400,
    status,
    json: async () => body,
  } as unknown as Response;
}

const err = (status: number, code: string, detail = '') =>
  jsonResponse(status, { code, detail });

export class FakeGateway {
  accounts = new Map<string, FakeAccount>();
  tokens = new Map<string, string>();
  students = new Map<string, Record<string, unknown>>();
  grades: GradeRow[] = [];
  oplog: {
    seq: number;
    actor: string;
    opKind: string;
    startTime: number;
    blockNumber: number;
    txHash: string;
    status: string;
  }[] = [];
  commitments: { body: string; issuer: string; seq: number; period: string }[] = [];
  auditReports: any[] = [];
  requests: LoggedRequest[] = [];

  /** txHash -> polls left before it reports included. */
  private pendingPolls = new Map<string, number>();
  private includedAt = new Map<string, number>();
  private nextBlock = 7;
  private tokenSeq = 0;
  /** How many /tx polls a fresh write stays "pending" for. */
  inclusionDelay = 2;

  addAccount(
    label: string,
    role: string,
    subjectId: string,
    displayName: string,
    key: KeyPair,
  ): string {
    const id = accountIdHex(key);
    this.accounts.set(id, {
      id,
      label,
      password: `pw-${label}`,
      role,
      subjectId,
      displayName,
      publicKey: key.publicKey,
      nonce: 0,
    });
    return id;
  }

  addCommitment(request: Record<string, unknown>, seq: number): void {
    this.commitments.push({
      body: JSON.stringify(request),
      issuer: String(request.issuer),
      seq,
      period: String(request.period),
    });
  }

  fetchImpl: typeof fetch = async (input, init) => {
    const url = new URL(String(input));
    const method = (init?.method ?? 'GET').toUpperCase();
    const headers: Record<string, string> = {};
    for (const [k, v] of Object.entries((init?.headers as Record<string, string>) ?? {})) {
      headers[k.toLowerCase()] = v;
    }
    let body: any = undefined;
    if (init?.body) body = JSON.parse(String(init.body));
    this.requests.push({ method, path: url.pathname, headers, body });
    return this.route(method, url, headers, body);
  };

  private authed(headers: Record<string, string>): FakeAccount | Response {
    const auth = headers.authorization ?? '';
    if (!auth.startsWith('Bearer ')) return err(401, 'NoSession');
    const accountId = this.tokens.get(auth.slice('Bearer '.length));
    const account = accountId ? this.accounts.get(accountId) : undefined;
    if (!account) return err(401, 'SessionExpired');
    return account;
  }

  /** Validate a signed write the way the server does; undefined = pass. */
  private checkWrite(
    account: FakeAccount,
    headers: Record<string, string>,
    body: any,
    wantKind: string,
  ): { tx: InspectedTx } | Response {
    if (!body?.tx) return err(400, 'MissingField', 'tx');
    let tx: InspectedTx;
    try {
      tx = inspectTx(body.tx);
    } catch (e) {
      return err(400, 'BadEncoding', String(e));
    }
    if (tx.senderHex !== account.id) return err(403, 'SenderMismatch');
    if (tx.opKind !== wantKind) return err(400, 'WrongOperation');
    if (!verifySignature(account.publicKey, tx.payload, tx.signature)) {
      return err(400, 'BadSignature');
    }
    if (tx.nonce !== account.nonce) return err(409, 'BadNonce');
    // also insist on the header so the intercept invariant is server-checked too
    if (headers['x-signature'] !== bytesToHex(tx.signature)) {
      return err(400, 'BadEncoding', 'x-signature header does not match the transaction');
    }
    account.nonce += 1;
    return { tx };
  }

  private accept(account: FakeAccount, tx: InspectedTx): Response {
    this.pendingPolls.set(tx.txHashHex, this.inclusionDelay);
    const block = this.nextBlock++;
    this.includedAt.set(tx.txHashHex, block);
    this.oplog.push({
      seq: this.oplog.length,
      actor: account.id,
      opKind: tx.opKind,
      startTime: 1755200000 + this.oplog.length,
      blockNumber: block,
      txHash: tx.txHashHex,
      status: 'applied',
    });
    return jsonResponse(200, { txHash: tx.txHashHex, status: 'pending', failover: false });
  }

  private route(
    method: string,
    url: URL,
    headers: Record<string, string>,
    body: any,
  ): Response {
    const path = url.pathname;

    if (method === 'POST' && path === '/login') {
      const account = this.accounts.get(String(body?.accountId ?? ''));
      if (!account || account.password !== body?.password) return err(401, 'BadCredentials');
      const token = `tok-${account.label}-${this.tokenSeq++}`;
      this.tokens.set(token, String(body.accountId));
      return jsonResponse(200, {
        token,
        accountId: body.accountId,
        // the real gateway capitalizes roles on the wire
        role: account.role.charAt(0).toUpperCase() + account.role.slice(1),
        expiresAt: 9999999999,
      });
    }

    if (method === 'POST' && path === '/verify') {
      const needle = JSON.stringify(body);
      const hit = this.commitments.find((c) => c.body === needle);
      if (!hit) return jsonResponse(200, { status: 'NotFound' });
      return jsonResponse(200, {
        status: 'Verified',
        issuer: hit.issuer,
        seq: hit.seq,
        period: hit.period,
      });
    }

    const who = this.authed(headers);
    if (!(who as FakeAccount).role) return who as Response;
    const account = who as FakeAccount;

    if (method === 'GET' && path === '/account') {
      return jsonResponse(200, {
        accountId: account.id,
        role: account.role.charAt(0).toUpperCase() + account.role.slice(1),
        subjectId: account.subjectId,
        displayName: account.displayName,
        expectedNonce: account.nonce,
      });
    }

    if (method === 'GET' && path === '/profile') {
      const target =
        account.role === 'student' ? account.subjectId : url.searchParams.get('studentId');
      const row = target ? this.students.get(target) : undefined;
      if (!row) return err(404, 'UnknownStudent', String(target));
      return jsonResponse(200, { profile: row, failover: false });
    }

    if (method === 'PUT' && path === '/profile') {
      const checked = this.checkWrite(account, headers, body, 'UpdateProfile');
      if (!(checked as any).tx) return checked as Response;
      const { tx } = checked as { tx: InspectedTx };
      const row = this.students.get(opText(tx, 'studentId'));
      if (row) row[opText(tx, 'field')] = opText(tx, 'value');
      return this.accept(account, tx);
    }

    if (method === 'GET' && path === '/grades') {
      let rows = this.grades;
      if (account.role === 'student') {
        rows = rows.filter((r) => r.studentId === account.subjectId);
      }
      const terms = new Map<string, number[]>();
      for (const r of rows) {
        if (!terms.has(r.term)) terms.set(r.term, []);
        terms.get(r.term)!.push(r.score);
      }
      const summaries = [...terms.entries()].map(([term, scores]) => ({
        term,
        count: scores.length,
        mean: scores.reduce((a, b) => a + b, 0) / scores.length,
        min: Math.min(...scores),
        max: Math.max(...scores),
      }));
      return jsonResponse(200, { rows, summaries, failover: false });
    }

    if (method === 'POST' && path === '/grades') {
      if (account.role !== 'staff') return err(403, 'RoleDenied');
      const checked = this.checkWrite(account, headers, body, 'UpsertGrade');
      if (!(checked as any).tx) return checked as Response;
      const { tx } = checked as { tx: InspectedTx };
      const row: GradeRow = {
        studentId: opText(tx, 'studentId'),
        courseId: opText(tx, 'courseId'),
        term: opText(tx, 'term'),
        score: Number(opText(tx, 'score')),
        letter: opText(tx, 'letter'),
        attachmentCid: '',
      };
      const at = this.grades.findIndex(
        (g) =>
          g.studentId === row.studentId && g.courseId === row.courseId && g.term === row.term,
      );
      if (at >= 0) this.grades[at] = row;
      else this.grades.push(row);
      return this.accept(account, tx);
    }

    if (method === 'POST' && path === '/attachments') {
      if (account.role !== 'staff') return err(403, 'RoleDenied');
      const checked = this.checkWrite(account, headers, body, 'AttachFile');
      if (!(checked as any).tx) return checked as Response;
      const { tx } = checked as { tx: InspectedTx };
      const content = Uint8Array.from(atob(String(body.contentB64 ?? '')), (c) =>
        c.charCodeAt(0),
      );
      const cidHex = bytesToHex(sha256(content));
      // the cid frame is hex ASCII already
      if (cidHex !== opText(tx, 'cid')) return err(400, 'CidMismatch');
      const target = this.grades.find(
        (g) => g.studentId === opText(tx, 'studentId') && g.courseId === opText(tx, 'courseId'),
      );
      if (target) target.attachmentCid = cidHex;
      const out = this.accept(account, tx);
      return {
        ok: true,
        status: 200,
        json: async () => ({ ...(await (out as any).json()), cid: cidHex }),
      } as unknown as Response;
    }

    if (method === 'POST' && path === '/transcript/export') {
      if (account.password !== body?.password) return err(401, 'BadCredentials');
      const studentId = account.role === 'student' ? account.subjectId : body?.studentId;
      const row = this.students.get(studentId);
      if (!row) return err(404, 'UnknownStudent');
      let rows = this.grades.filter((g) => g.studentId === studentId);
      if (Array.isArray(body?.courseIds) && body.courseIds.length) {
        rows = rows.filter((g) => body.courseIds.includes(g.courseId));
      }
      return jsonResponse(200, {
        studentId,
        studentName: row.name,
        rows,
        issuedAt: 1755201111,
        digest: bytesToHex(sha256(utf8(JSON.stringify(rows)))),
        failover: false,
      });
    }

    if (method === 'GET' && path === '/oplog') {
      if (account.role !== 'registrar' && account.role !== 'auditor') {
        return err(403, 'RoleDenied');
      }
      const offset = Number(url.searchParams.get('offset') ?? 0);
      const limit = Number(url.searchParams.get('limit') ?? 100);
      return jsonResponse(200, {
        entries: this.oplog.slice(offset, offset + limit),
        total: this.oplog.length,
        offset,
        failover: false,
      });
    }

    if (method === 'GET' && path.startsWith('/tx/')) {
      const hash = path.slice('/tx/'.length);
      const left = this.pendingPolls.get(hash);
      if (left !== undefined && left > 0) {
        this.pendingPolls.set(hash, left - 1);
        return jsonResponse(200, { status: 'pending', failover: false });
      }
      const block = this.includedAt.get(hash);
      if (block !== undefined) {
        return jsonResponse(200, { status: 'included', blockNumber: block, failover: false });
      }
      return jsonResponse(200, { status: 'unknown', failover: false });
    }

    if (method === 'POST' && path === '/audit/run') {
      if (account.role !== 'auditor') return err(403, 'RoleDenied', 'audit rounds are auditor-only');
      const report = {
        roundId: `round-${String(this.auditReports.length + 1).padStart(4, '0')}`,
        table: 'grades',
        consensusDigest: bytesToHex(sha256(utf8(`round ${this.auditReports.length}`))),
        adjudicationSource: 'chain',
        votes: [
          { nodeId: 'n1', digest: 'aa'.repeat(32) },
          { nodeId: 'n2', digest: 'aa'.repeat(32) },
        ],
        abstained: [],
        forged: [],
        divergentNodes: ['n3'],
        flags: { n3: 'divergent' },
        localizedRows: {
          n3: [{ rowKey: 'S1|C1|2025S1', localValue: '90', authoritativeValue: '93' }],
        },
        repairsApplied: 1,
        converged: true,
        text: 'round report: n3 diverged on grades and was repaired',
      };
      this.auditReports.push(report);
      return jsonResponse(200, { roundId: report.roundId, reports: [report] });
    }

    if (method === 'GET' && path === '/audit/reports') {
      if (account.role !== 'auditor') return err(403, 'RoleDenied');
      return jsonResponse(200, { reports: this.auditReports });
    }

    return err(404, 'NotSupported', `${method} ${path}`);
  }
}
