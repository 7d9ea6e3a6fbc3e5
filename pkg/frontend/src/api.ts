// Typed client over the interview HTTP API.
//
// Every request is checked against a whitelist and recorded in a network
// log, so the blinded-interview guarantee (no findings or diagnosis fetched
// before a session closes) is auditable from the client side too: the only
// route that ever reveals case content is /score, and the server refuses it
// while the session is open.

import type { CaseSummary, ScorePayload, SessionView } from './types.js';

export interface NetworkCall {
  method: string;
  path: string;
  status: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

const ALLOWED_PATHS: RegExp[] = [
  /^\/cases$/,
  /^\/sessions$/,
  /^\/sessions\/[^/]+$/,
  /^\/sessions\/[^/]+\/turns$/,
  /^\/sessions\/[^/]+\/diagnose$/,
  /^\/sessions\/[^/]+\/score$/,
];

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  readonly log: NetworkCall[] = [];

  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
    private token: string | null = null,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    if (!ALLOWED_PATHS.some((re) => re.test(path))) {
      throw new Error(`blocked request to non-whitelisted path: ${path}`);
    }
    const headers: Record<string, string> = { 'Content-Type': 'application/json' };
    if (this.token) headers['Authorization'] = `Bearer ${this.token}`;
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    this.log.push({ method, path, status: res.status });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const parsed = (await res.json()) as { detail?: string };
        if (parsed && typeof parsed.detail === 'string') detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listCases(): Promise<CaseSummary[]> {
    return this.request('GET', '/cases');
  }

  createSession(caseId: string): Promise<SessionView> {
    return this.request('POST', '/sessions', { case_id: caseId, human: true });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request('GET', `/sessions/${sessionId}`);
  }

  sendTurn(sessionId: string, text: string): Promise<SessionView> {
    return this.request('POST', `/sessions/${sessionId}/turns`, { text });
  }

  diagnose(sessionId: string, labels: string[]): Promise<SessionView> {
    return this.request('POST', `/sessions/${sessionId}/diagnose`, { labels });
  }

  score(sessionId: string): Promise<ScorePayload> {
    return this.request('GET', `/sessions/${sessionId}/score`);
  }
}
