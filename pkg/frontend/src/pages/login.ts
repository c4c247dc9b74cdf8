/**
 * Login page. Holds the key-file import and export too, since keys have to
 * be in browser storage before the first signed write and this is the page
 * everyone lands on. Login itself is password-based; the key only comes into
 * play when a write is signed.
 */

import { PageContext } from '../context';
import { el, clear, shortHex } from '../dom';
import { SessionState } from '../store';
import { showError, clearError, notice, labeled } from '../ui';

function roleHome(role: string): string {
  switch (role) {
    case 'student':
      return '#/grades';
    case 'staff':
      return '#/staff';
    case 'registrar':
      return '#/oplog';
    case 'auditor':
      return '#/audit';
    default:
      return '#/profile';
  }
}

export function renderLogin(ctx: PageContext): void {
  const page = el('section', { class: 'page page-login' });

  const keyPanel = el('div', { class: 'card key-panel' });
  const renderKeyPanel = () => {
    clear(keyPanel);
    const keys = ctx.store.listKeys();
    keyPanel.append(el('h3', {}, ['Signing keys']));
    if (keys.length === 0) {
      keyPanel.append(
        notice('no signing keys held in this browser; import a key file to sign writes'),
      );
    } else {
      const list = el('ul', { class: 'key-list' });
      for (const k of keys) {
        list.append(
          el('li', { 'data-account-id': k.accountId }, [
            `${k.label} (${k.role || 'unknown role'}) ${shortHex(k.accountId)}`,
          ]),
        );
      }
      keyPanel.append(list);
    }

    const importBox = el('textarea', {
      class: 'key-import-text',
      placeholder: 'paste an educhain-keys v1 file here',
      rows: '4',
    });
    const fileInput = el('input', { type: 'file', class: 'key-import-file' });
    const importBtn = el('button', { type: 'button', class: 'key-import-btn' }, ['Import keys']);
    importBtn.addEventListener('click', async () => {
      clearError(keyPanel);
      try {
        let text = importBox.value.trim();
        const file = fileInput.files && fileInput.files[0];
        if (!text && file) text = await file.text();
        if (!text) throw new Error('choose a key file or paste its contents first');
        const count = ctx.store.importKeys(text);
        renderKeyPanel();
        keyPanel.append(notice(`imported ${count} key${count === 1 ? '' : 's'}`, 'notice ok'));
      } catch (err) {
        showError(keyPanel, err);
      }
    });

    const exportBtn = el('button', { type: 'button', class: 'key-export-btn' }, ['Export key file']);
    const exportOut = el('textarea', { class: 'key-export-text', rows: '4', readOnly: 'true' });
    exportOut.style.display = 'none';
    exportBtn.addEventListener('click', () => {
      const text = ctx.store.exportKeys();
      exportOut.value = text;
      exportOut.style.display = '';
      // offer a real download where the browser supports it
      if (typeof URL.createObjectURL === 'function') {
        const a = el('a', {
          href: URL.createObjectURL(new Blob([text], { type: 'application/json' })),
        });
        (a as any).download = 'educhain-keys.json';
        a.click();
      }
    });

    keyPanel.append(
      el('div', { class: 'key-io' }, [importBox, fileInput, importBtn, exportBtn, exportOut]),
    );
  };
  renderKeyPanel();

  const form = el('form', { class: 'card login-form' });
  const select = el('select', { name: 'account', class: 'login-account' });
  const keys = ctx.store.listKeys();
  for (const k of keys) {
    select.append(el('option', { value: k.accountId }, [`${k.label} (${k.role})`]));
  }
  select.append(el('option', { value: '' }, ['other account id']));
  const manual = el('input', {
    name: 'accountId',
    class: 'login-account-manual',
    placeholder: 'account id (hex)',
  });
  manual.style.display = keys.length ? 'none' : '';
  select.addEventListener('change', () => {
    manual.style.display = select.value ? 'none' : '';
  });
  const password = el('input', { type: 'password', name: 'password', class: 'login-password' });
  const submit = el('button', { type: 'submit', class: 'login-submit' }, ['Log in']);

  form.append(
    el('h2', {}, ['Sign in']),
    labeled('Account', select),
    manual,
    labeled('Password', password),
    submit,
  );

  form.addEventListener('submit', async (event) => {
    event.preventDefault();
    clearError(form);
    const accountId = (select.value || manual.value).trim();
    try {
      if (!accountId) throw new Error('pick an account or enter its id');
      const result = await ctx.client.login(accountId, password.value);
      const view = await ctx.client.account();
      // the wire spells roles capitalized; every gate here compares lowercase
      const role = result.role.toLowerCase();
      const session: SessionState = {
        token: result.token,
        accountId: result.accountId,
        role,
        subjectId: view.subjectId,
        displayName: view.displayName,
        keyRef: result.accountId,
        department: 'records',
      };
      ctx.setSession(session);
      await ctx.go(roleHome(role));
    } catch (err) {
      showError(form, err);
    }
  });

  page.append(form, keyPanel);
  ctx.root.append(page);
}
