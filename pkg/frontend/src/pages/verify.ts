/**
 * Verify. The public form a recruiter uses: paste the credential fields
 * exactly as they appear on the document, pick the issuing university, and
 * the consortium log either has a matching commitment or it does not. No
 * login, no token; the gateway treats tampered and never-issued alike.
 */

import { VerifyRequest } from '../api';
import { PageContext } from '../context';
import { el, clear } from '../dom';
import { showError, clearError, labeled, notice } from '../ui';

interface RowInputs {
  courseId: HTMLInputElement;
  term: HTMLInputElement;
  score: HTMLInputElement;
  letter: HTMLInputElement;
  wrap: HTMLElement;
}

export function renderVerify(ctx: PageContext): void {
  const page = el('section', { class: 'page page-verify' });
  ctx.root.append(page);
  page.append(
    el('h2', {}, ['Verify a credential']),
    notice('no login needed; fields must match the document exactly'),
  );

  const form = el('form', { class: 'card verify-form' });
  const credentialType = el('select', { class: 'verify-type' }, [
    el('option', { value: 'Transcript' }, ['Transcript']),
    el('option', { value: 'Diploma' }, ['Diploma']),
  ]);
  const subjectId = el('input', { class: 'verify-subject', placeholder: 'student id' });
  const studentName = el('input', { class: 'verify-name', placeholder: 'student name' });
  const period = el('input', { class: 'verify-period', placeholder: 'term or cohort' });
  const issuer = el('input', { class: 'verify-issuer', placeholder: 'issuing university id' });
  const degree = el('input', { class: 'verify-degree', placeholder: 'degree title' });
  const degreeField = labeled('Degree', degree);
  degreeField.style.display = 'none';

  const rowsBox = el('div', { class: 'verify-rows' });
  const rowInputs: RowInputs[] = [];
  const addRow = (preset: Partial<Record<'courseId' | 'term' | 'score' | 'letter', string>> = {}) => {
    const courseId = el('input', { class: 'vrow-course', placeholder: 'course', value: preset.courseId ?? '' });
    const term = el('input', { class: 'vrow-term', placeholder: 'term', value: preset.term ?? '' });
    const score = el('input', { class: 'vrow-score', placeholder: 'score', value: preset.score ?? '' });
    const letter = el('input', { class: 'vrow-letter', placeholder: 'letter', value: preset.letter ?? '' });
    const drop = el('button', { type: 'button', class: 'vrow-drop' }, ['Remove']);
    const wrap = el('div', { class: 'verify-row' }, [courseId, term, score, letter, drop]);
    const entry = { courseId, term, score, letter, wrap };
    drop.addEventListener('click', () => {
      wrap.remove();
      rowInputs.splice(rowInputs.indexOf(entry), 1);
    });
    rowInputs.push(entry);
    rowsBox.append(wrap);
  };
  addRow();
  const addBtn = el('button', { type: 'button', class: 'verify-add-row' }, ['Add row']);
  addBtn.addEventListener('click', () => addRow());

  const rowsField = el('div', { class: 'verify-rows-field' }, [
    el('h4', {}, ['Transcript rows']),
    rowsBox,
    addBtn,
  ]);

  credentialType.addEventListener('change', () => {
    const isTranscript = credentialType.value === 'Transcript';
    rowsField.style.display = isTranscript ? '' : 'none';
    degreeField.style.display = isTranscript ? 'none' : '';
  });

  const submit = el('button', { type: 'submit', class: 'verify-submit' }, ['Check']);
  const result = el('div', { class: 'verify-outcome' });

  form.append(
    labeled('Credential type', credentialType),
    labeled('Student id', subjectId),
    labeled('Student name', studentName),
    labeled('Period', period),
    labeled('Issuer', issuer),
    degreeField,
    rowsField,
    submit,
  );
  page.append(form, result);

  form.addEventListener('submit', async (event) => {
    event.preventDefault();
    clearError(form);
    clear(result);
    const body: VerifyRequest = {
      credentialType: credentialType.value as VerifyRequest['credentialType'],
      subjectId: subjectId.value.trim(),
      studentName: studentName.value.trim(),
      period: period.value.trim(),
      issuer: issuer.value.trim(),
    };
    try {
      if (body.credentialType === 'Transcript') {
        body.rows = rowInputs
          .filter((r) => r.courseId.value.trim())
          .map((r) => {
            const score = Number(r.score.value);
            if (!Number.isInteger(score)) throw new Error('row scores must be whole numbers');
            return {
              courseId: r.courseId.value.trim(),
              term: r.term.value.trim(),
              score,
              letter: r.letter.value.trim(),
            };
          });
      } else {
        body.degree = degree.value.trim();
      }
      const outcome = await ctx.client.verify(body);
      if (outcome.status === 'Verified') {
        result.append(
          el('div', { class: 'verify-result verified' }, [
            el('strong', {}, ['Verified']),
            ` issued by ${outcome.issuer}, commitment #${outcome.seq}, period ${outcome.period}`,
          ]),
        );
      } else {
        result.append(
          el('div', { class: 'verify-result notfound' }, [
            el('strong', {}, ['NotFound']),
            ' no commitment matches; a tampered and a never-issued credential look the same here',
          ]),
        );
      }
    } catch (err) {
      showError(form, err);
    }
  });
}
