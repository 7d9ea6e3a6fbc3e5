// Shapes mirrored from the interview service's JSON responses.

export interface CaseSummary {
  case_id: string;
  chief_complaint: string;
}

export interface TurnView {
  index: number;
  role: 'doctor' | 'patient';
  content: string;
}

export interface SessionView {
  session_id: string;
  case_id: string;
  status: 'open' | 'awaiting_doctor' | 'awaiting_patient' | 'closed';
  awaiting: string;
  turns: TurnView[];
  questions_asked: number;
  max_turns: number;
  remaining_questions: number;
  k: number;
  terminated_by: string | null;
  error: string | null;
}

export interface RewardBreakdown {
  recall: number;
  recall_max: number;
  rank: number | null;
  rank_term: number;
  turn_penalty: number;
  alpha: number;
  t: number;
  total: number;
}

export interface TrajectoryMetrics {
  precision: number;
  recall: number;
  f1: number;
  top_k_hits: boolean[];
  total_turns: number;
  doctor_questions: number;
}

export interface FindingRow {
  finding_id: number;
  text: string;
  aligned_turn: number;
  elicited: boolean;
}

export interface ScorePayload {
  session_id: string;
  case_id: string;
  breakdown: RewardBreakdown;
  alignment: Record<string, number>;
  turn_rewards: unknown[];
  metrics: TrajectoryMetrics;
  dx: string;
  final_diagnoses: { entries: string[] } | null;
  findings: FindingRow[];
}
