/**
 * Hash router and app shell. Routes carry a role gate; the gateway enforces
 * the same rules again server-side, the gate here only keeps the UI honest.
 * Navigation is async because pages fetch on render; tests await settled().
 */

import { GatewayClient } from './api';
import { PageContext } from './context';
import { el, clear } from './dom';
import { renderAudit } from './pages/audit';
import { renderGrades } from './pages/grades';
import { renderLogin } from './pages/login';
import { renderOplog } from './pages/oplog';
import { renderProfile } from './pages/profile';
import { renderStaffGrades } from './pages/staff';
import { renderVerify } from './pages/verify';
import { PortalStore, SessionState } from './store';
import { TrackOptions } from './track';
import { showError } from './ui';

export const DEPARTMENTS = ['records', 'exams', 'archive', 'admissions', 'library'];

interface Route {
  label: string;
  /** null means public */
  roles: string[] | null;
  render(ctx: PageContext): void | Promise<void>;
}

export const ROUTES: Record<string, Route> = {
  '#/login': { label: 'Login', roles: null, render: renderLogin },
  '#/verify': { label: 'Verify', roles: null, render: renderVerify },
  '#/profile': {
    label: 'Profile',
    roles: ['student', 'staff', 'registrar', 'auditor'],
    render: renderProfile,
  },
  '#/grades': { label: 'My grades', roles: ['student'], render: renderGrades },
  '#/staff': { label: 'Staff grades', roles: ['staff'], render: renderStaffGrades },
  '#/oplog': { label: 'Operation log', roles: ['registrar', 'auditor'], render: renderOplog },
  '#/audit': { label: 'Audit', roles: ['auditor'], render: renderAudit },
};

export function homeFor(role: string | undefined): string {
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
      return '#/login';
  }
}

export class PortalApp {
  session: SessionState | null = null;
  /** Polling knobs for inclusion tracking; tests tighten these. */
  track: TrackOptions = {};

  private nav: HTMLElement;
  private view: HTMLElement;
  private pending: Promise<void> = Promise.resolve();
  private renderedHash: string | null = null;
  private onHashChange = () => {
    // go() renders synchronously and the browser's own hashchange arrives a
    // beat later; re-rendering then would wipe banners and inclusion chips.
    if (window.location.hash === this.renderedHash) return;
    this.pending = this.renderCurrent();
  };

  constructor(
    private root: HTMLElement,
    public client: GatewayClient,
    public store: PortalStore,
  ) {
    this.nav = el('nav', { class: 'portal-nav' });
    this.view = el('main', { class: 'portal-view' });
  }

  start(): Promise<void> {
    this.session = this.store.loadSession();
    this.client.token = this.session ? this.session.token : null;
    clear(this.root);
    this.root.append(this.nav, this.view);
    this.renderNav();
    window.addEventListener('hashchange', this.onHashChange);
    if (!ROUTES[window.location.hash]) {
      window.location.hash = this.session ? homeFor(this.session.role) : '#/login';
    }
    this.pending = this.renderCurrent();
    return this.pending;
  }

  /** The promise of the most recent navigation; await before poking the DOM. */
  settled(): Promise<void> {
    return this.pending;
  }

  /** Detach from the window; tests spin up several apps in one document. */
  stop(): void {
    window.removeEventListener('hashchange', this.onHashChange);
  }

  go(hash: string): Promise<void> {
    if (window.location.hash !== hash) window.location.hash = hash;
    this.pending = this.renderCurrent();
    return this.pending;
  }

  setSession(state: SessionState | null): void {
    this.session = state;
    this.client.token = state ? state.token : null;
    if (state) this.store.saveSession(state);
    else this.store.clearSession();
    this.renderNav();
  }

  updateSession(patch: Partial<SessionState>): void {
    if (!this.session) return;
    this.session = { ...this.session, ...patch };
    this.store.saveSession(this.session);
  }

  logout(): Promise<void> {
    this.setSession(null);
    return this.go('#/login');
  }

  private context(): PageContext {
    return {
      client: this.client,
      store: this.store,
      session: this.session,
      root: this.view,
      setSession: (s) => this.setSession(s),
      go: (h) => this.go(h),
      updateSession: (p) => this.updateSession(p),
      track: this.track,
    };
  }

  private renderNav(): void {
    clear(this.nav);
    this.nav.append(el('span', { class: 'brand' }, ['educhain portal']));
    const links = el('span', { class: 'nav-links' });
    for (const [hash, route] of Object.entries(ROUTES)) {
      if (hash === '#/login') continue;
      if (route.roles && (!this.session || !route.roles.includes(this.session.role))) continue;
      links.append(el('a', { href: hash, class: 'nav-link' }, [route.label]));
    }
    this.nav.append(links);

    if (this.session) {
      const dept = el('select', { class: 'nav-department', title: 'active department' });
      for (const d of DEPARTMENTS) {
        const opt = el('option', { value: d }, [d]);
        if (d === this.session.department) opt.selected = true;
        dept.append(opt);
      }
      dept.addEventListener('change', () => this.updateSession({ department: dept.value }));
      const who = el('span', { class: 'nav-who' }, [
        `${this.session.displayName} (${this.session.role})`,
      ]);
      const out = el('button', { type: 'button', class: 'nav-logout' }, ['Log out']);
      out.addEventListener('click', () => void this.logout());
      this.nav.append(dept, who, out);
    } else {
      this.nav.append(el('a', { href: '#/login', class: 'nav-link nav-login' }, ['Log in']));
    }
  }

  private async renderCurrent(): Promise<void> {
    const hash = window.location.hash;
    this.renderedHash = hash;
    const route = ROUTES[hash] ?? ROUTES['#/login'];
    clear(this.view);
    if (route.roles) {
      if (!this.session) {
        this.view.append(
          el('div', { class: 'login-required' }, [
            'log in to open this page ',
            el('a', { href: '#/login' }, ['go to login']),
          ]),
        );
        return;
      }
      if (!route.roles.includes(this.session.role)) {
        this.view.append(
          el('div', { class: 'access-denied' }, [
            `Access denied: role ${this.session.role} cannot open this page`,
          ]),
        );
        return;
      }
    }
    try {
      await route.render(this.context());
    } catch (err) {
      showError(this.view, err);
    }
  }
}
