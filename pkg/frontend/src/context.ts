import { GatewayClient } from './api';
import { PortalStore, SessionState } from './store';
import { TrackOptions } from './track';

/** What a page gets handed when it renders. */
export interface PageContext {
  client: GatewayClient;
  store: PortalStore;
  session: SessionState | null;
  /** Container the page renders into; already cleared. */
  root: HTMLElement;
  setSession(state: SessionState | null): void;
  go(hash: string): Promise<void>;
  updateSession(patch: Partial<SessionState>): void;
  /** Polling knobs, tightened by tests. */
  track: TrackOptions;
}
