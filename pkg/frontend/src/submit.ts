/**
 * The client side of a write: look up the held key, ask the gateway for the
 * expected nonce (committed nonce plus this account's pending txs, so rapid
 * successive writes sequence correctly), sign the canonical payload locally,
 * and hand back the encoded transaction. The seed never leaves this module's
 * caller; only txHex and the signature header go on the wire.
 */

import { GatewayClient } from './api';
import { PortalStore, SessionState } from './store';
import { RecordOp, SignedTx, makeTransaction } from './tx';

export class NoKeyHeld extends Error {
  constructor(accountId: string) {
    super(`no signing key held for account ${accountId}; import a key file first`);
  }
}

export async function signOp(
  client: GatewayClient,
  store: PortalStore,
  session: SessionState,
  op: RecordOp,
): Promise<SignedTx> {
  const key = store.keyForAccount(session.accountId);
  if (!key) throw new NoKeyHeld(session.accountId);
  const view = await client.account();
  const timestamp = Math.floor(Date.now() / 1000);
  return makeTransaction(key, view.expectedNonce, op, timestamp);
}
