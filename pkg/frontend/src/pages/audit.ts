/**
 * AuditDashboard. Auditor-only: kick off a secondary-consensus round over
 * the replica tables and read the reports. Repairs happen server-side under
 * the audit service key when the operator configured one; this page only
 * triggers and renders.
 */

import { AuditReportView } from '../api';
import { PageContext } from '../context';
import { el, clear, shortHex } from '../dom';
import { showError, clearError, notice } from '../ui';

function reportCard(report: AuditReportView): HTMLElement {
  const card = el('div', {
    class: `card audit-report ${report.converged ? 'converged' : 'diverged'}`,
    'data-round': report.roundId,
    'data-table': report.table,
  });
  card.append(
    el('h3', {}, [
      `${report.roundId} ${report.table}: ${report.converged ? 'converged' : 'diverged'}`,
    ]),
  );
  const facts = el('ul', { class: 'audit-facts' });
  facts.append(
    el('li', {}, [`adjudication: ${report.adjudicationSource}`]),
    el('li', {}, [
      `consensus digest: ${report.consensusDigest ? shortHex(report.consensusDigest) : 'none'}`,
    ]),
    el('li', {}, [`repairs applied: ${report.repairsApplied}`]),
  );
  if (report.divergentNodes.length)
    facts.append(el('li', {}, [`divergent: ${report.divergentNodes.join(', ')}`]));
  if (report.forged.length)
    facts.append(el('li', {}, [`forged votes: ${report.forged.join(', ')}`]));
  if (report.abstained.length)
    facts.append(el('li', {}, [`abstained: ${report.abstained.join(', ')}`]));
  for (const [node, flag] of Object.entries(report.flags)) {
    facts.append(el('li', {}, [`flag ${node}: ${flag}`]));
  }
  card.append(facts);

  const rows = Object.entries(report.localizedRows);
  if (rows.length) {
    const list = el('ul', { class: 'audit-localized' });
    for (const [node, items] of rows) {
      for (const item of items) {
        list.append(
          el('li', {}, [
            `${node} ${item.rowKey}: local ${item.localValue ?? 'missing'}, ` +
              `authoritative ${item.authoritativeValue ?? 'missing'}`,
          ]),
        );
      }
    }
    card.append(el('h4', {}, ['Localized differences']), list);
  }

  card.append(el('pre', { class: 'audit-text' }, [report.text]));
  return card;
}

export async function renderAudit(ctx: PageContext): Promise<void> {
  const page = el('section', { class: 'page page-audit' });
  ctx.root.append(page);
  page.append(el('h2', {}, ['Audit dashboard']));

  const runBtn = el('button', { type: 'button', class: 'audit-run' }, ['Run audit round']);
  const reportsBox = el('div', { class: 'audit-reports' });
  page.append(el('div', { class: 'card' }, [runBtn]), reportsBox);

  const renderReports = (reports: AuditReportView[]) => {
    clear(reportsBox);
    if (!reports.length) {
      reportsBox.append(notice('no audit rounds recorded yet'));
      return;
    }
    // newest first
    for (const report of [...reports].reverse()) reportsBox.append(reportCard(report));
  };

  runBtn.addEventListener('click', async () => {
    clearError(page);
    runBtn.disabled = true;
    runBtn.textContent = 'Running...';
    try {
      await ctx.client.runAudit({});
      const all = await ctx.client.auditReports();
      renderReports(all.reports);
    } catch (err) {
      showError(page, err);
    } finally {
      runBtn.disabled = false;
      runBtn.textContent = 'Run audit round';
    }
  });

  try {
    const all = await ctx.client.auditReports();
    renderReports(all.reports);
  } catch (err) {
    showError(page, err);
  }
}
