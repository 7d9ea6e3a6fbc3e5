// State machine behind the interview tab: pick a case, run the chat,
// submit the ranked differential, show the score panel. One active session
// per tab; the server is authoritative and the transcript is always
// reconciled to server turn indices after any reply or refresh.

import { ApiClient, ApiError } from './api.js';
import type { CaseSummary, ScorePayload, SessionView, TurnView } from './types.js';

export type Phase = 'picking' | 'interview' | 'scored';

export interface TranscriptEntry extends TurnView {
  pending?: boolean;
}

export interface UiState {
  phase: Phase;
  cases: CaseSummary[];
  session: SessionView | null;
  score: ScorePayload | null;
  pendingQuestion: string | null;
  busy: boolean;
  error: string | null;
}

type Listener = (state: UiState) => void;

export class InterviewController {
  private state: UiState = {
    phase: 'picking',
    cases: [],
    session: null,
    score: null,
    pendingQuestion: null,
    busy: false,
    error: null,
  };
  private listeners: Listener[] = [];

  constructor(private api: ApiClient) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  getState(): UiState {
    return this.state;
  }

  private setState(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Server turns in index order, plus the optimistic doctor line while a
   * reply is in flight. */
  transcript(): TranscriptEntry[] {
    const turns: TranscriptEntry[] = [...(this.state.session?.turns ?? [])].sort(
      (a, b) => a.index - b.index,
    );
    if (this.state.pendingQuestion !== null) {
      turns.push({
        index: turns.length,
        role: 'doctor',
        content: this.state.pendingQuestion,
        pending: true,
      });
    }
    return turns;
  }

  canAsk(): boolean {
    const s = this.state.session;
    return (
      !this.state.busy &&
      s !== null &&
      s.status === 'awaiting_doctor' &&
      s.remaining_questions > 0
    );
  }

  async loadCases(): Promise<void> {
    this.setState({ busy: true, error: null });
    try {
      const cases = await this.api.listCases();
      this.setState({ cases, busy: false });
    } catch (err) {
      this.setState({ busy: false, error: describe(err) });
    }
  }

  async startSession(caseId: string): Promise<void> {
    this.setState({ busy: true, error: null });
    try {
      const session = await this.api.createSession(caseId);
      this.setState({ phase: 'interview', session, score: null, busy: false });
    } catch (err) {
      this.setState({ busy: false, error: describe(err) });
    }
  }

  async sendQuestion(text: string): Promise<void> {
    const question = text.trim();
    const session = this.state.session;
    if (!question || !session) return;
    if (!this.canAsk()) return;
    // Optimistic append; the server view replaces it on reply.
    this.setState({ busy: true, error: null, pendingQuestion: question });
    try {
      const view = await this.api.sendTurn(session.session_id, question);
      this.setState({ session: view, pendingQuestion: null, busy: false });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Out of order or closed under us: drop the optimistic line and
        // resync with the server.
        this.setState({ pendingQuestion: null });
        await this.refresh();
        this.setState({ busy: false, error: err.detail });
        return;
      }
      this.setState({ pendingQuestion: null, busy: false, error: describe(err) });
    }
  }

  /** Client-side mirror of the server's 422: exactly k non-empty labels. */
  validateDiagnosis(labels: string[]): string | null {
    const k = this.state.session?.k ?? 5;
    const filled = labels.map((l) => l.trim()).filter((l) => l.length > 0);
    if (filled.length !== k || labels.some((l) => !l.trim())) {
      return `exactly ${k} required`;
    }
    return null;
  }

  async submitDiagnosis(labels: string[]): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    const problem = this.validateDiagnosis(labels);
    if (problem) {
      // Blocked client-side: no request leaves the browser.
      this.setState({ error: problem });
      return;
    }
    this.setState({ busy: true, error: null });
    try {
      const view = await this.api.diagnose(
        session.session_id,
        labels.map((l) => l.trim()),
      );
      const score = await this.api.score(view.session_id);
      this.setState({ phase: 'scored', session: view, score, busy: false });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.refresh();
      }
      this.setState({ busy: false, error: describe(err) });
    }
  }

  async refresh(): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    try {
      const view = await this.api.getSession(session.session_id);
      this.setState({ session: view });
      if (view.status === 'closed' && this.state.phase === 'scored' && !this.state.score) {
        const score = await this.api.score(view.session_id);
        this.setState({ score });
      }
    } catch (err) {
      this.setState({ error: describe(err) });
    }
  }

  reset(): void {
    this.setState({
      phase: 'picking',
      session: null,
      score: null,
      pendingQuestion: null,
      error: null,
      busy: false,
    });
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.detail;
  if (err instanceof Error) return err.message;
  return String(err);
}
