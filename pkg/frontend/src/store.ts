/**
 * Client-side state: the session and the signing keys.
 *
 * Keys live in browser storage and never travel to the gateway; the server
 * only ever sees public keys (inside account ids) and signatures. Import
 * accepts the "educhain-keys v1" file the node CLI writes; any passwords in
 * that file are dropped on import, passwords are typed at login and nowhere
 * else. Export produces the same format so keys can be moved to another
 * browser.
 */

import { bytesToHex } from '@noble/hashes/utils.js';

import { KeyPair, accountIdHex, keyPairFromSeedHex } from './keys';

const SESSION_SLOT = 'educhain.session';
const KEYS_SLOT = 'educhain.keys';

export const KEYFILE_FORMAT = 'educhain-keys v1';

export interface SessionState {
  token: string;
  accountId: string;
  role: string;
  subjectId: string;
  displayName: string;
  /** Reference into the key store; the seed itself stays out of the session. */
  keyRef: string;
  department: string;
}

export interface StoredKey {
  label: string;
  role: string;
  accountId: string;
  publicKey: string;
  keySeed: string;
}

export class KeyImportError extends Error {}

export class PortalStore {
  constructor(private storage: Storage) {}

  // -- session ---------------------------------------------------------------

  saveSession(state: SessionState): void {
    this.storage.setItem(SESSION_SLOT, JSON.stringify(state));
  }

  loadSession(): SessionState | null {
    const raw = this.storage.getItem(SESSION_SLOT);
    if (!raw) return null;
    try {
      const state = JSON.parse(raw);
      if (typeof state.token !== 'string' || typeof state.accountId !== 'string') return null;
      return state as SessionState;
    } catch {
      return null;
    }
  }

  clearSession(): void {
    this.storage.removeItem(SESSION_SLOT);
  }

  // -- keys ------------------------------------------------------------------

  listKeys(): StoredKey[] {
    const raw = this.storage.getItem(KEYS_SLOT);
    if (!raw) return [];
    try {
      const keys = JSON.parse(raw);
      return Array.isArray(keys) ? keys : [];
    } catch {
      return [];
    }
  }

  private writeKeys(keys: StoredKey[]): void {
    this.storage.setItem(KEYS_SLOT, JSON.stringify(keys));
  }

  addKey(key: StoredKey): void {
    const keys = this.listKeys().filter((k) => k.accountId !== key.accountId);
    keys.push(key);
    this.writeKeys(keys);
  }

  keyForAccount(accountIdHex: string): KeyPair | null {
    const entry = this.listKeys().find((k) => k.accountId === accountIdHex);
    if (!entry) return null;
    return keyPairFromSeedHex(entry.keySeed);
  }

  /** Parse an educhain-keys v1 file and merge its accounts in.
   * Returns the number of keys imported. Password fields are discarded. */
  importKeys(text: string): number {
    let doc: any;
    try {
      doc = JSON.parse(text);
    } catch {
      throw new KeyImportError('key file is not valid JSON');
    }
    if (!doc || doc.format !== KEYFILE_FORMAT) {
      throw new KeyImportError(`key file format must be "${KEYFILE_FORMAT}"`);
    }
    if (!Array.isArray(doc.accounts)) {
      throw new KeyImportError('key file has no accounts list');
    }
    let count = 0;
    for (const entry of doc.accounts) {
      if (
        typeof entry?.label !== 'string' ||
        typeof entry?.accountId !== 'string' ||
        typeof entry?.keySeed !== 'string'
      ) {
        throw new KeyImportError('key entry needs label, accountId and keySeed');
      }
      // recompute rather than trust: the seed must actually produce the id
      const pair = keyPairFromSeedHex(entry.keySeed);
      const derivedId = accountIdHex(pair);
      if (derivedId !== entry.accountId) {
        throw new KeyImportError(`key "${entry.label}" does not match its accountId`);
      }
      this.addKey({
        label: entry.label,
        role: typeof entry.role === 'string' ? entry.role : '',
        accountId: derivedId,
        publicKey: bytesToHex(pair.publicKey),
        keySeed: entry.keySeed,
      });
      count += 1;
    }
    return count;
  }

  exportKeys(): string {
    return JSON.stringify(
      { format: KEYFILE_FORMAT, accounts: this.listKeys() },
      null,
      2,
    ) + '\n';
  }
}
