/**
 * Canonical byte encoding, mirrored from the ledger node.
 *
 * The rules (asserted byte-for-byte against shared/encoding_vectors.json):
 *   - bytes  -> lowercase hex rendered as ASCII
 *   - string -> UTF-8
 *   - int    -> decimal ASCII, minus sign allowed (bigint for u64 range)
 *   - list   -> concat of be32(len(enc(elem))) + enc(elem)
 *   - map    -> entries sorted by UTF-8 key bytes, each framed as
 *               be32(len(name)) + name + be32(len(value)) + value
 * Booleans are rejected outright, and the top level must be a map.
 */

import { bytesToHex, concatBytes } from '@noble/hashes/utils.js';

export type Value = number | bigint | string | Uint8Array | Value[] | ValueMap;

export interface ValueMap {
  [key: string]: Value;
}

export class UnsupportedValue extends Error {}

const ASCII = new TextEncoder();

export function utf8(text: string): Uint8Array {
  return ASCII.encode(text);
}

function be32(n: number): Uint8Array {
  const out = new Uint8Array(4);
  new DataView(out.buffer).setUint32(0, n, false);
  return out;
}

function compareBytes(a: Uint8Array, b: Uint8Array): number {
  const n = Math.min(a.length, b.length);
  for (let i = 0; i < n; i++) {
    if (a[i] !== b[i]) return a[i] - b[i];
  }
  return a.length - b.length;
}

function isPlainMap(value: unknown): value is ValueMap {
  return (
    typeof value === 'object' &&
    value !== null &&
    !Array.isArray(value) &&
    !(value instanceof Uint8Array)
  );
}

export function encodeValue(value: Value): Uint8Array {
  if (typeof value === 'boolean') {
    throw new UnsupportedValue('booleans are not encodable; use 0/1 or a label');
  }
  if (value instanceof Uint8Array) {
    return utf8(bytesToHex(value));
  }
  if (typeof value === 'string') {
    return utf8(value);
  }
  if (typeof value === 'bigint') {
    return utf8(value.toString(10));
  }
  if (typeof value === 'number') {
    if (!Number.isSafeInteger(value)) {
      throw new UnsupportedValue(`int values must be safe integers, got ${value} (use bigint)`);
    }
    return utf8(value.toString(10));
  }
  if (Array.isArray(value)) {
    const parts: Uint8Array[] = [];
    for (const elem of value) {
      const enc = encodeValue(elem);
      parts.push(be32(enc.length), enc);
    }
    return concatBytes(...parts);
  }
  if (isPlainMap(value)) {
    return encodeMap(value);
  }
  throw new UnsupportedValue(`cannot canonically encode ${typeof value}`);
}

function encodeMap(map: ValueMap): Uint8Array {
  const entries = Object.keys(map).map((key) => ({
    name: utf8(key),
    value: encodeValue(map[key]),
  }));
  entries.sort((a, b) => compareBytes(a.name, b.name));
  const parts: Uint8Array[] = [];
  for (const { name, value } of entries) {
    parts.push(be32(name.length), name, be32(value.length), value);
  }
  return concatBytes(...parts);
}

/** Deterministic byte encoding of a field map. Top level must be a map. */
export function canonicalEncode(value: Value): Uint8Array {
  if (!isPlainMap(value)) {
    throw new UnsupportedValue('top-level canonical encoding requires a field map');
  }
  return encodeMap(value);
}
