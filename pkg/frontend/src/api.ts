/**
 * Thin typed client for the gateway's JSON surface.
 *
 * Reads are plain authenticated requests. Writes always carry a canonical
 * transaction signed on this side of the wire; submitSigned is the single
 * funnel for them, so an unsigned mutation cannot be expressed against this
 * API at all. The signature also rides along as an x-signature header for
 * intercept-level checks and middleware logging.
 */

import type { SignedTx } from './tx';

export class GatewayError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string = '',
  ) {
    super(detail ? `${code}: ${detail}` : code);
  }
}

export interface LoginResult {
  token: string;
  accountId: string;
  role: string;
  expiresAt: number;
}

export interface AccountView {
  accountId: string;
  role: string;
  subjectId: string;
  displayName: string;
  expectedNonce: number;
}

export interface GradeRow {
  studentId: string;
  courseId: string;
  term: string;
  score: number;
  letter: string;
  attachmentCid: string;
  [extra: string]: unknown;
}

export interface GradesResult {
  rows: GradeRow[];
  summaries: { term: string; count: number; mean: number; min: number; max: number }[];
  failover: boolean;
}

export interface SubmitResult {
  txHash: string;
  status: string;
  failover: boolean;
  cid?: string;
}

export interface TxStatusResult {
  status: 'included' | 'pending' | 'unknown';
  blockNumber?: number;
  failover: boolean;
}

export interface OplogEntry {
  seq: number;
  actor: string;
  opKind: string;
  startTime: number;
  blockNumber: number;
  txHash: string;
  status: string;
}

export interface OplogResult {
  entries: OplogEntry[];
  total: number;
  offset: number;
  failover: boolean;
}

export interface TranscriptResult {
  studentId: string;
  studentName: string;
  rows: GradeRow[];
  issuedAt: number;
  digest: string;
  failover: boolean;
}

export interface VerifyRequest {
  credentialType: 'Transcript' | 'Diploma';
  subjectId: string;
  studentName: string;
  period: string;
  issuer: string;
  rows?: { courseId: string; term: string; score: number; letter: string }[];
  degree?: string;
}

export interface VerifyResult {
  status: 'Verified' | 'NotFound';
  issuer?: string;
  seq?: number;
  period?: string;
}

export interface AuditReportView {
  roundId: string;
  table: string;
  consensusDigest: string | null;
  adjudicationSource: string;
  votes: { nodeId: string; digest: string }[];
  abstained: string[];
  forged: string[];
  divergentNodes: string[];
  flags: Record<string, string>;
  localizedRows: Record<
    string,
    { rowKey: string; localValue: string | null; authoritativeValue: string | null }[]
  >;
  repairsApplied: number;
  converged: boolean;
  text: string;
}

type Query = Record<string, string | number | undefined>;

export class GatewayClient {
  token: string | null = null;

  constructor(
    public baseUrl: string,
    private fetchImpl: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(
    method: string,
    path: string,
    opts: { body?: unknown; query?: Query; headers?: Record<string, string> } = {},
  ): Promise<any> {
    const url = new URL(this.baseUrl.replace(/\/$/, '') + path);
    for (const [key, value] of Object.entries(opts.query ?? {})) {
      if (value !== undefined) url.searchParams.set(key, String(value));
    }
    const headers: Record<string, string> = { ...(opts.headers ?? {}) };
    if (this.token) headers.authorization = `Bearer ${this.token}`;
    const init: RequestInit = { method, headers };
    if (opts.body !== undefined) {
      headers['content-type'] = 'application/json';
      init.body = JSON.stringify(opts.body);
    }
    let response: Response;
    try {
      response = await this.fetchImpl(url.toString(), init);
    } catch (err) {
      throw new GatewayError(0, 'GatewayUnreachable', String(err));
    }
    if (!response.ok) {
      let code = `Http${response.status}`;
      let detail = '';
      try {
        const body = await response.json();
        if (body && typeof body.code === 'string') {
          code = body.code;
          detail = typeof body.detail === 'string' ? body.detail : '';
        }
      } catch {
        // non-JSON error body; keep the status code
      }
      throw new GatewayError(response.status, code, detail);
    }
    return response.json();
  }

  /** Single path for every mutating request: a signed tx or nothing. */
  private submitSigned(path: string, signed: SignedTx, extra: Record<string, unknown> = {}) {
    return this.request(path === '/profile' ? 'PUT' : 'POST', path, {
      body: { tx: signed.txHex, ...extra },
      headers: { 'x-signature': signed.signatureHex },
    }) as Promise<SubmitResult>;
  }

  async login(accountIdHex: string, password: string): Promise<LoginResult> {
    const result = await this.request('POST', '/login', {
      body: { accountId: accountIdHex, password },
    });
    this.token = result.token;
    return result;
  }

  account(): Promise<AccountView> {
    return this.request('GET', '/account');
  }

  getProfile(studentId?: string): Promise<{ profile: Record<string, unknown>; failover: boolean }> {
    return this.request('GET', '/profile', { query: { studentId } });
  }

  putProfile(signed: SignedTx, department?: string): Promise<SubmitResult> {
    return this.submitSigned('/profile', signed, department ? { department } : {});
  }

  getGrades(filters: { studentId?: string; courseId?: string } = {}): Promise<GradesResult> {
    return this.request('GET', '/grades', { query: filters });
  }

  postGrade(signed: SignedTx, department?: string): Promise<SubmitResult> {
    return this.submitSigned('/grades', signed, department ? { department } : {});
  }

  postAttachment(signed: SignedTx, contentB64: string): Promise<SubmitResult> {
    return this.submitSigned('/attachments', signed, { contentB64 });
  }

  exportTranscript(body: {
    password: string;
    studentId?: string;
    courseIds?: string[];
  }): Promise<TranscriptResult> {
    return this.request('POST', '/transcript/export', { body });
  }

  getOplog(offset = 0, limit = 100): Promise<OplogResult> {
    return this.request('GET', '/oplog', { query: { offset, limit } });
  }

  txStatus(txHashHex: string): Promise<TxStatusResult> {
    return this.request('GET', `/tx/${txHashHex}`);
  }

  verify(body: VerifyRequest): Promise<VerifyResult> {
    return this.request('POST', '/verify', { body });
  }

  runAudit(body: { tables?: string[]; chunkSize?: number } = {}): Promise<{
    roundId: string;
    reports: AuditReportView[];
  }> {
    return this.request('POST', '/audit/run', { body });
  }

  auditReports(): Promise<{ reports: AuditReportView[] }> {
    return this.request('GET', '/audit/reports');
  }
}
