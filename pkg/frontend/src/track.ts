/**
 * Optimistic-write bookkeeping: a submitted tx gets a status chip right away
 * and the chip polls /tx/{hash} until the block number turns up. The chip
 * carries data-tx-hash and, once included, data-block-number, so both tests
 * and people can read the outcome off the DOM.
 */

import { GatewayClient } from './api';
import { el, sleep } from './dom';

export interface TrackOptions {
  intervalMs?: number;
  attempts?: number;
}

export function makeChip(txHashHex: string): HTMLSpanElement {
  const chip = el('span', { class: 'tx-chip pending', 'data-tx-hash': txHashHex }, [
    'pending',
  ]);
  return chip;
}

export async function trackInclusion(
  client: GatewayClient,
  txHashHex: string,
  chip: HTMLElement,
  options: TrackOptions = {},
): Promise<number | null> {
  const intervalMs = options.intervalMs ?? 200;
  const attempts = options.attempts ?? 150;
  for (let i = 0; i < attempts; i++) {
    let status;
    try {
      status = await client.txStatus(txHashHex);
    } catch {
      await sleep(intervalMs);
      continue;
    }
    if (status.status === 'included' && status.blockNumber !== undefined) {
      chip.textContent = `included (block ${status.blockNumber})`;
      chip.classList.remove('pending');
      chip.classList.add('included');
      chip.setAttribute('data-block-number', String(status.blockNumber));
      return status.blockNumber;
    }
    // "unknown" right after submit can just be gossip lag when the write went
    // to a non-default department node, so only give up on it after a grace
    // window of polls.
    if (status.status === 'unknown' && i >= 10) {
      chip.textContent = 'not found';
      chip.classList.remove('pending');
      chip.classList.add('failed');
      return null;
    }
    await sleep(intervalMs);
  }
  chip.textContent = 'still pending';
  return null;
}
