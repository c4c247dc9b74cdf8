/**
 * OperationLog. The registrar's paginated view over the node's operation
 * log: when each write started and which block carried it.
 */

import { PageContext } from '../context';
import { el, clear, fmtTime, shortHex } from '../dom';
import { showError, failoverNotice, notice } from '../ui';

const PAGE_SIZE = 25;

export async function renderOplog(ctx: PageContext): Promise<void> {
  const page = el('section', { class: 'page page-oplog' });
  ctx.root.append(page);
  page.append(el('h2', {}, ['Operation log']));

  const card = el('div', { class: 'card' });
  const table = el('table', { class: 'oplog-table' });
  const pager = el('div', { class: 'pager' });
  const prev = el('button', { type: 'button', class: 'pager-prev' }, ['Previous']);
  const next = el('button', { type: 'button', class: 'pager-next' }, ['Next']);
  const where = el('span', { class: 'pager-where' });
  pager.append(prev, where, next);
  card.append(table, pager);
  page.append(card);

  let offset = 0;

  const load = async () => {
    clear(table);
    table.append(
      el('tr', {}, ['seq', 'start time', 'operation', 'actor', 'block', 'tx', 'status'].map(
        (h) => el('th', {}, [h]),
      )),
    );
    try {
      const result = await ctx.client.getOplog(offset, PAGE_SIZE);
      for (const entry of result.entries) {
        table.append(
          el('tr', { class: 'oplog-row', 'data-tx-hash': entry.txHash }, [
            el('td', {}, [String(entry.seq)]),
            el('td', { class: 'oplog-start' }, [fmtTime(entry.startTime)]),
            el('td', {}, [entry.opKind]),
            el('td', { title: entry.actor }, [shortHex(entry.actor)]),
            el('td', { class: 'oplog-block' }, [String(entry.blockNumber)]),
            el('td', { title: entry.txHash }, [shortHex(entry.txHash)]),
            el('td', {}, [entry.status]),
          ]),
        );
      }
      const last = Math.min(offset + result.entries.length, result.total);
      where.textContent = result.total
        ? `${offset + 1}-${last} of ${result.total}`
        : 'empty';
      prev.disabled = offset === 0;
      next.disabled = last >= result.total;
      const fo = failoverNotice(result.failover);
      if (fo) card.append(fo);
      if (!result.entries.length && offset === 0) card.append(notice('no operations logged yet'));
    } catch (err) {
      showError(page, err);
    }
  };

  prev.addEventListener('click', () => {
    offset = Math.max(0, offset - PAGE_SIZE);
    void load();
  });
  next.addEventListener('click', () => {
    offset += PAGE_SIZE;
    void load();
  });

  await load();
}
