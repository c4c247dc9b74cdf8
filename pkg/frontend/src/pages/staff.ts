/**
 * StaffGrades. Rows the gateway scopes to this staff account's courses, a
 * grade form that signs UpsertGrade locally, and attachment upload. The row
 * is updated in the table the moment the gateway accepts the tx; the chip
 * next to it keeps polling until a block number comes back.
 */

import { sha256 } from '@noble/hashes/sha2.js';
import { bytesToHex } from '@noble/hashes/utils.js';

import { GradeRow } from '../api';
import { PageContext } from '../context';
import { el, clear } from '../dom';
import { signOp } from '../submit';
import { makeChip, trackInclusion } from '../track';
import { showError, clearError, failoverNotice, labeled, notice } from '../ui';

function toBase64(bytes: Uint8Array): string {
  let binary = '';
  for (let i = 0; i < bytes.length; i += 0x8000) {
    binary += String.fromCharCode(...bytes.subarray(i, i + 0x8000));
  }
  return btoa(binary);
}

export async function renderStaffGrades(ctx: PageContext): Promise<void> {
  const session = ctx.session!;
  const page = el('section', { class: 'page page-staff' });
  ctx.root.append(page);
  page.append(el('h2', {}, ['Course grades']));

  const tableCard = el('div', { class: 'card' });
  const table = el('table', { class: 'grades-table' });
  tableCard.append(el('h3', {}, ['Rows']), table);

  const rowNodes = new Map<string, HTMLTableRowElement>();
  const keyOf = (r: { studentId: string; courseId: string; term: string }) =>
    `${r.studentId}|${r.courseId}|${r.term}`;

  const renderHeader = () => {
    table.append(
      el('tr', {}, ['student', 'course', 'term', 'score', 'letter', 'status'].map((h) =>
        el('th', {}, [h]),
      )),
    );
  };

  const upsertRow = (row: GradeRow, chip?: HTMLElement) => {
    const key = keyOf(row);
    const tr = el('tr', { class: 'grade-row', 'data-key': key }, [
      el('td', {}, [String(row.studentId)]),
      el('td', {}, [String(row.courseId)]),
      el('td', {}, [String(row.term)]),
      el('td', { class: 'grade-score' }, [String(row.score)]),
      el('td', {}, [String(row.letter)]),
      el('td', { class: 'grade-status' }, chip ? [chip] : []),
    ]);
    const existing = rowNodes.get(key);
    if (existing) existing.replaceWith(tr);
    else table.append(tr);
    rowNodes.set(key, tr);
  };

  renderHeader();
  try {
    const result = await ctx.client.getGrades();
    const fo = failoverNotice(result.failover);
    if (fo) page.append(fo);
    for (const row of result.rows) upsertRow(row);
    if (!result.rows.length) tableCard.append(notice('no rows in any owned course yet'));
  } catch (err) {
    showError(page, err);
  }
  page.append(tableCard);

  // -- grade form --------------------------------------------------------------

  const form = el('form', { class: 'card grade-form' });
  const studentId = el('input', { name: 'studentId', class: 'grade-student' });
  const courseId = el('input', { name: 'courseId', class: 'grade-course' });
  const term = el('input', { name: 'term', class: 'grade-term' });
  const score = el('input', { name: 'score', class: 'grade-score-input' });
  const letter = el('input', { name: 'letter', class: 'grade-letter' });
  const submit = el('button', { type: 'submit', class: 'grade-submit' }, ['Sign and submit']);
  form.append(
    el('h3', {}, ['Upsert grade']),
    labeled('Student', studentId),
    labeled('Course', courseId),
    labeled('Term', term),
    labeled('Score', score),
    labeled('Letter', letter),
    submit,
  );
  page.append(form);

  form.addEventListener('submit', async (event) => {
    event.preventDefault();
    clearError(form);
    const parsed = Number(score.value);
    try {
      if (!Number.isInteger(parsed)) throw new Error('score must be a whole number');
      const op = {
        kind: 'UpsertGrade' as const,
        studentId: studentId.value.trim(),
        courseId: courseId.value.trim(),
        term: term.value.trim(),
        score: parsed,
        letter: letter.value.trim(),
      };
      submit.disabled = true;
      const signed = await signOp(ctx.client, ctx.store, session, op);
      const out = await ctx.client.postGrade(signed, session.department);
      const chip = makeChip(out.txHash);
      upsertRow(
        { ...op, attachmentCid: '' },
        chip,
      );
      void trackInclusion(ctx.client, out.txHash, chip, ctx.track);
    } catch (err) {
      showError(form, err);
    } finally {
      submit.disabled = false;
    }
  });

  // -- attachment --------------------------------------------------------------

  const attach = el('form', { class: 'card attach-form' });
  const aStudent = el('input', { name: 'studentId', class: 'attach-student' });
  const aCourse = el('input', { name: 'courseId', class: 'attach-course' });
  const aLabel = el('input', { name: 'mediaLabel', class: 'attach-label', value: 'report' });
  const aFile = el('input', { type: 'file', class: 'attach-file' });
  const aText = el('textarea', {
    class: 'attach-text',
    rows: '3',
    placeholder: 'or paste text content to attach',
  });
  const aSubmit = el('button', { type: 'submit', class: 'attach-submit' }, ['Attach']);
  const aStatus = el('span', { class: 'attach-status' });
  attach.append(
    el('h3', {}, ['Attach file to latest grade']),
    labeled('Student', aStudent),
    labeled('Course', aCourse),
    labeled('Label', aLabel),
    aFile,
    aText,
    aSubmit,
    aStatus,
  );
  page.append(attach);

  attach.addEventListener('submit', async (event) => {
    event.preventDefault();
    clearError(attach);
    clear(aStatus);
    try {
      let content: Uint8Array;
      const file = aFile.files && aFile.files[0];
      if (file) {
        content = new Uint8Array(await file.arrayBuffer());
      } else if (aText.value) {
        content = new TextEncoder().encode(aText.value);
      } else {
        throw new Error('choose a file or paste content first');
      }
      const cidHex = bytesToHex(sha256(content));
      const signed = await signOp(ctx.client, ctx.store, session, {
        kind: 'AttachFile',
        studentId: aStudent.value.trim(),
        courseId: aCourse.value.trim(),
        cid: cidHex,
        mediaLabel: aLabel.value.trim(),
        sizeBytes: content.length,
      });
      const out = await ctx.client.postAttachment(signed, toBase64(content));
      const chip = makeChip(out.txHash);
      aStatus.append(chip, ` cid sha256:${out.cid ?? cidHex}`);
      void trackInclusion(ctx.client, out.txHash, chip, ctx.track);
    } catch (err) {
      showError(attach, err);
    }
  });
}
