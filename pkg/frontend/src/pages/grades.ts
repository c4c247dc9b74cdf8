/**
 * MyGrade. The student's rows, term summaries, a per-course detail pane
 * (the attachment cid is a content address; there is no retrieval endpoint,
 * so it renders as the address itself), and transcript export. Export asks
 * for the password again; the gateway enforces that, the form just makes it
 * visible up front.
 */

import { GradeRow, TranscriptResult } from '../api';
import { PageContext } from '../context';
import { el, clear, fmtTime } from '../dom';
import { showError, clearError, failoverNotice, labeled, notice } from '../ui';

export function transcriptPrintout(doc: TranscriptResult): string {
  const lines = [
    'TRANSCRIPT (unofficial rendering; verify against the consortium log)',
    `student  ${doc.studentName} (${doc.studentId})`,
    `issued   ${fmtTime(doc.issuedAt)}`,
    '',
    'course     term       score  letter',
  ];
  for (const row of doc.rows) {
    lines.push(
      `${String(row.courseId).padEnd(10)} ${String(row.term).padEnd(10)} ` +
        `${String(row.score).padEnd(6)} ${row.letter}`,
    );
  }
  lines.push('', `digest   sha256:${doc.digest}`);
  return lines.join('\n');
}

export async function renderGrades(ctx: PageContext): Promise<void> {
  const page = el('section', { class: 'page page-grades' });
  ctx.root.append(page);
  page.append(el('h2', {}, ['My grades']));

  let rows: GradeRow[];
  try {
    const result = await ctx.client.getGrades();
    rows = result.rows;
    const fo = failoverNotice(result.failover);
    if (fo) page.append(fo);

    if (result.summaries.length) {
      const sumTable = el('table', { class: 'summary-table' });
      sumTable.append(
        el('tr', {}, ['term', 'courses', 'mean', 'min', 'max'].map((h) => el('th', {}, [h]))),
      );
      for (const s of result.summaries) {
        sumTable.append(
          el('tr', {}, [
            el('td', {}, [s.term]),
            el('td', {}, [String(s.count)]),
            el('td', {}, [s.mean.toFixed(1)]),
            el('td', {}, [String(s.min)]),
            el('td', {}, [String(s.max)]),
          ]),
        );
      }
      page.append(el('div', { class: 'card' }, [el('h3', {}, ['Term summary']), sumTable]));
    }
  } catch (err) {
    showError(page, err);
    return;
  }

  const detail = el('div', { class: 'grade-detail' });
  const table = el('table', { class: 'grades-table' });
  table.append(
    el('tr', {}, ['', 'course', 'term', 'score', 'letter', ''].map((h) => el('th', {}, [h]))),
  );
  const checks: { box: HTMLInputElement; row: GradeRow }[] = [];
  for (const row of rows) {
    const box = el('input', { type: 'checkbox', class: 'grade-check' });
    checks.push({ box, row });
    const link = el('a', { href: '#', class: 'grade-detail-link' }, [String(row.courseId)]);
    link.addEventListener('click', (event) => {
      event.preventDefault();
      clear(detail);
      const cid = row.attachmentCid;
      detail.append(
        el('div', { class: 'card' }, [
          el('h3', {}, [`${row.courseId} ${row.term}`]),
          el('p', {}, [`score ${row.score}, letter ${row.letter}`]),
          cid
            ? el('p', { class: 'grade-attachment' }, [
                'attachment: ',
                el('code', {}, [`sha256:${cid}`]),
              ])
            : el('p', { class: 'grade-attachment none' }, ['no attachment on file']),
        ]),
      );
    });
    table.append(
      el('tr', { 'data-course': String(row.courseId), 'data-term': String(row.term) }, [
        el('td', {}, [box]),
        el('td', {}, [link]),
        el('td', {}, [String(row.term)]),
        el('td', { class: 'grade-score' }, [String(row.score)]),
        el('td', {}, [String(row.letter)]),
        el('td', {}, [row.attachmentCid ? 'file' : '']),
      ]),
    );
  }
  page.append(el('div', { class: 'card' }, [el('h3', {}, ['Courses']), table]), detail);
  if (!rows.length) page.append(notice('no grades on file yet'));

  // -- export -----------------------------------------------------------------

  const exportCard = el('div', { class: 'card export-card' });
  exportCard.append(
    el('h3', {}, ['Export transcript']),
    notice('tick the courses to include (none ticked exports everything)'),
  );
  const password = el('input', {
    type: 'password',
    class: 'export-password',
    placeholder: 're-enter password',
  });
  const exportBtn = el('button', { type: 'button', class: 'export-btn' }, ['Export']);
  const printout = el('pre', { class: 'transcript-printout' });
  printout.style.display = 'none';
  exportCard.append(labeled('Password', password), exportBtn, printout);
  page.append(exportCard);

  exportBtn.addEventListener('click', async () => {
    clearError(exportCard);
    printout.style.display = 'none';
    const picked = checks.filter((c) => c.box.checked).map((c) => String(c.row.courseId));
    const courseIds = [...new Set(picked)];
    try {
      const doc = await ctx.client.exportTranscript({
        password: password.value,
        ...(courseIds.length ? { courseIds } : {}),
      });
      printout.textContent = transcriptPrintout(doc);
      printout.style.display = '';
      const fo = failoverNotice(doc.failover);
      if (fo) exportCard.append(fo);
    } catch (err) {
      showError(exportCard, err);
    }
  });
}
