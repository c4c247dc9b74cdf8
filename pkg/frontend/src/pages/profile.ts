/**
 * MyProfile. Students see their own row and can edit the contact fields;
 * each field saves as its own UpdateProfile write because the operation
 * carries exactly one field. Registrars and auditors get a read-only lookup
 * by student id instead.
 */

import { PageContext } from '../context';
import { el, clear } from '../dom';
import { signOp } from '../submit';
import { makeChip, trackInclusion } from '../track';
import { showError, clearError, failoverNotice, labeled, notice } from '../ui';

const EDITABLE = ['telephone', 'email', 'address'] as const;
const READONLY = ['studentId', 'name', 'program', 'degreeAwarded'] as const;

export async function renderProfile(ctx: PageContext): Promise<void> {
  const session = ctx.session!;
  const page = el('section', { class: 'page page-profile' });
  ctx.root.append(page);
  page.append(el('h2', {}, ['Profile']));

  if (session.role === 'student') {
    await renderOwnProfile(ctx, page);
    return;
  }
  if (session.role === 'registrar' || session.role === 'auditor') {
    renderLookup(ctx, page);
    return;
  }
  page.append(notice('staff accounts have no profile page; grades live under StaffGrades'));
}

async function renderOwnProfile(ctx: PageContext, page: HTMLElement): Promise<void> {
  const session = ctx.session!;
  let profile: Record<string, unknown>;
  try {
    const result = await ctx.client.getProfile();
    profile = result.profile;
    const fo = failoverNotice(result.failover);
    if (fo) page.append(fo);
  } catch (err) {
    showError(page, err);
    return;
  }

  const table = el('table', { class: 'profile-table' });
  for (const field of READONLY) {
    table.append(
      el('tr', {}, [
        el('th', {}, [field]),
        el('td', { class: `profile-${field}` }, [String(profile[field] ?? '')]),
      ]),
    );
  }
  page.append(table);

  const editCard = el('div', { class: 'card profile-edit' });
  editCard.append(el('h3', {}, ['Contact details']));
  for (const field of EDITABLE) {
    const input = el('input', {
      class: `profile-input-${field}`,
      value: String(profile[field] ?? ''),
    });
    const save = el('button', { type: 'button', class: `profile-save-${field}` }, ['Save']);
    const status = el('span', { class: 'save-status' });
    const row = el('div', { class: 'field-row' }, [labeled(field, input), save, status]);
    let committed = String(profile[field] ?? '');

    save.addEventListener('click', async () => {
      clearError(editCard);
      const value = input.value;
      if (value === committed) return;
      save.disabled = true;
      try {
        const signed = await signOp(ctx.client, ctx.store, session, {
          kind: 'UpdateProfile',
          studentId: session.subjectId,
          field,
          value,
        });
        const out = await ctx.client.putProfile(signed, session.department);
        committed = value; // optimistic: the input already shows it
        clear(status);
        const chip = makeChip(out.txHash);
        status.append(chip);
        void trackInclusion(ctx.client, out.txHash, chip, ctx.track);
      } catch (err) {
        input.value = committed; // roll the edit back
        showError(editCard, err);
      } finally {
        save.disabled = false;
      }
    });
    editCard.append(row);
  }
  page.append(editCard);
}

function renderLookup(ctx: PageContext, page: HTMLElement): void {
  const input = el('input', { class: 'profile-lookup-id', placeholder: 'student id' });
  const btn = el('button', { type: 'button', class: 'profile-lookup-btn' }, ['Look up']);
  const out = el('div', { class: 'profile-lookup-result' });
  page.append(el('div', { class: 'card' }, [labeled('Student id', input), btn, out]));

  btn.addEventListener('click', async () => {
    clearError(page);
    clear(out);
    try {
      const result = await ctx.client.getProfile(input.value.trim());
      const table = el('table', { class: 'profile-table' });
      for (const [key, value] of Object.entries(result.profile)) {
        table.append(
          el('tr', {}, [el('th', {}, [key]), el('td', {}, [String(value ?? '')])]),
        );
      }
      out.append(table);
      const fo = failoverNotice(result.failover);
      if (fo) out.append(fo);
    } catch (err) {
      showError(page, err);
    }
  });
}
