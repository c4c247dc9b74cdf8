/**
 * Ed25519 signing keys, client side.
 *
 * The account id is the SHA-256 of the 32-byte raw public key, and the
 * 32-byte secret is the RFC 8032 seed, so keys derived here match the node's
 * registry byte for byte. Keys never leave the client except through the
 * explicit key-file export.
 */

import * as ed from '@noble/ed25519';
import { sha256, sha512 } from '@noble/hashes/sha2.js';
import { bytesToHex, hexToBytes } from '@noble/hashes/utils.js';

// noble's synchronous API wants the hash wired in once at module load
ed.hashes.sha512 = sha512;

export interface KeyPair {
  publicKey: Uint8Array;
  secretKey: Uint8Array;
}

export class MalformedKey extends Error {}

export function keyPairFromSeed(seed: Uint8Array): KeyPair {
  if (seed.length !== 32) {
    throw new MalformedKey(`seed must be 32 bytes, got ${seed.length}`);
  }
  return { publicKey: ed.getPublicKey(seed), secretKey: seed };
}

export function keyPairFromSeedHex(seedHex: string): KeyPair {
  return keyPairFromSeed(hexToBytes(seedHex));
}

/** Fresh random keypair (registration flow). */
export function generateKeyPair(): KeyPair {
  const seed = new Uint8Array(32);
  crypto.getRandomValues(seed);
  return keyPairFromSeed(seed);
}

export function accountIdFor(publicKey: Uint8Array): Uint8Array {
  if (publicKey.length !== 32) {
    throw new MalformedKey('public key must be 32 bytes');
  }
  return sha256(publicKey);
}

export function accountIdHex(key: KeyPair): string {
  return bytesToHex(accountIdFor(key.publicKey));
}

export function signPayload(key: KeyPair, message: Uint8Array): Uint8Array {
  return ed.sign(message, key.secretKey);
}

export function verifySignature(
  publicKey: Uint8Array,
  message: Uint8Array,
  signature: Uint8Array,
): boolean {
  if (signature.length !== 64) return false;
  try {
    return ed.verify(signature, message, publicKey);
  } catch {
    return false;
  }
}

export function sha256Hex(data: Uint8Array): string {
  return bytesToHex(sha256(data));
}
