/** Error presentation and a few widgets shared across pages. */

import { GatewayError } from './api';
import { el } from './dom';

/** Human-readable lines for the gateway's error codes. The code itself is
 * always shown verbatim in front of this text. */
const FRIENDLY: Record<string, string> = {
  BadCredentials: 'account id or password did not match',
  AccountLocked: 'too many failed attempts, the account is locked for a while',
  NoSession: 'not logged in',
  SessionExpired: 'the session has expired, log in again',
  RoleDenied: 'this account role cannot do that',
  PermissionDenied: 'the chain rejected the operation',
  SenderMismatch: 'the transaction signer is not the logged-in account',
  BadNonce: 'nonce out of step, reload and try again',
  MempoolFull: 'the node is saturated, try again shortly',
  NoNodeAvailable: 'no node is reachable for that department',
  WrongOperation: 'the transaction kind does not fit this endpoint',
  BadEncoding: 'the payload could not be decoded',
  CidMismatch: 'file content does not match the attachment digest',
  MissingField: 'a required field is empty',
  SchemaViolation: 'a field failed validation',
  UnknownStudent: 'no student row under that id',
  MissingGrade: 'no grade stored for a requested course',
  NotFound: 'nothing published under those fields',
  NotSupported: 'this gateway does not serve that endpoint',
  AuditUnavailable: 'no audit targets are configured on this gateway',
  GatewayUnreachable: 'could not reach the gateway',
};

export function describeError(err: unknown): string {
  if (err instanceof GatewayError) {
    const tail = err.detail || FRIENDLY[err.code] || '';
    return tail ? `${err.code}: ${tail}` : err.code;
  }
  return err instanceof Error ? err.message : String(err);
}

export function errorBanner(err: unknown): HTMLElement {
  return el('div', { class: 'error-banner', role: 'alert' }, [describeError(err)]);
}

export function notice(text: string, cls = 'notice'): HTMLElement {
  return el('div', { class: cls }, [text]);
}

export function failoverNotice(failover: boolean): HTMLElement | null {
  if (!failover) return null;
  return notice('served by the fallback node; the department node is down', 'notice failover');
}

export function labeled(text: string, control: HTMLElement): HTMLElement {
  return el('label', { class: 'field' }, [el('span', {}, [text]), control]);
}

export function clearError(host: HTMLElement): void {
  for (const child of Array.from(host.children)) {
    if (child.classList.contains('error-banner')) child.remove();
  }
}

/** Replace any previous .error-banner in `host` with one for `err`. */
export function showError(host: HTMLElement, err: unknown): void {
  clearError(host);
  host.prepend(errorBanner(err));
}
