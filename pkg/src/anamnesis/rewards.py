"""Finding alignment, diagnosis ranking, and the two reward kernels.

The dialogue-level reward treats the medical note as a silver-standard
reference and combines three terms:

    total = recall + (recall / recall_max) * (1 - rank / k) - alpha * t / 2

with rank the 1-based position of the first judged match in the predicted
list, and total forced to 0 whenever the true diagnosis is absent from the
top-k. The turn-level reward makes question and diagnosis actions
comparable on a single scale: a question earns 1 iff it acquired a new
relevant finding, a diagnosis earns recall_t * (1 - rank_t / k).

Both kernels are pure functions; the judge-backed operations
(align_findings, rank_diagnosis) wrap one schema-validated model call each.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from . import prompts
from .domain import (
    DEFAULT_K,
    DOCTOR,
    Action,
    Ask,
    Diagnose,
    DiagnosisList,
    DialogueState,
    DomainError,
    PatientCase,
    Trajectory,
    Turn,
)
from .gateway import EndpointProfile, Gateway, SchemaError, user

DEFAULT_ALPHA = 0.02


@dataclass(frozen=True)
class FindingAlignment:
    """finding_id -> latest conversation turn mentioning it, or -1."""

    aligned_turn: Mapping[int, int]

    def elicited_ids(self) -> frozenset[int]:
        return frozenset(i for i, t in self.aligned_turn.items() if t >= 0)

    def elicited_at(self, turn_index: int) -> frozenset[int]:
        """Findings counted as elicited once the conversation has reached
        ``turn_index``: every finding whose aligned turn is <= that index."""
        return frozenset(i for i, t in self.aligned_turn.items() if 0 <= t <= turn_index)

    def recall(self) -> float:
        if not self.aligned_turn:
            return 0.0
        return len(self.elicited_ids()) / len(self.aligned_turn)

    def to_dict(self) -> dict[str, int]:
        return {str(k): v for k, v in sorted(self.aligned_turn.items())}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FindingAlignment":
        return cls(aligned_turn={int(k): int(v) for k, v in d.items()})


@dataclass(frozen=True)
class DiagnosisRank:
    """Judge verdict: 0-based match_index into the predicted list, or none.
    ``rank`` converts to the 1-based convention used by the reward."""

    match_index: int | None

    @property
    def rank(self) -> int | None:
        return None if self.match_index is None else self.match_index + 1

    def to_dict(self) -> dict[str, Any]:
        return {"match_index": self.match_index}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DiagnosisRank":
        mi = d.get("match_index")
        return cls(match_index=None if mi is None else int(mi))


@dataclass(frozen=True)
class RewardBreakdown:
    recall: float
    recall_max: float
    rank: int | None
    rank_term: float
    turn_penalty: float
    alpha: float
    t: int
    total: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "recall": self.recall,
            "recall_max": self.recall_max,
            "rank": self.rank,
            "rank_term": self.rank_term,
            "turn_penalty": self.turn_penalty,
            "alpha": self.alpha,
            "t": self.t,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RewardBreakdown":
        return cls(
            recall=float(d["recall"]),
            recall_max=float(d["recall_max"]),
            rank=None if d.get("rank") is None else int(d["rank"]),
            rank_term=float(d["rank_term"]),
            turn_penalty=float(d["turn_penalty"]),
            alpha=float(d["alpha"]),
            t=int(d["t"]),
            total=float(d["total"]),
        )


@dataclass(frozen=True)
class TurnReward:
    action_kind: str  # "ask" | "diagnose"
    value: float
    new_finding_id: int | None = None
    recall_t: float | None = None
    rank_t: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "action_kind": self.action_kind,
            "value": self.value,
            "new_finding_id": self.new_finding_id,
            "recall_t": self.recall_t,
            "rank_t": self.rank_t,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TurnReward":
        return cls(
            action_kind=str(d["action_kind"]),
            value=float(d["value"]),
            new_finding_id=None if d.get("new_finding_id") is None else int(d["new_finding_id"]),
            recall_t=None if d.get("recall_t") is None else float(d["recall_t"]),
            rank_t=None if d.get("rank_t") is None else int(d["rank_t"]),
        )


# -- pure kernels ----------------------------------------------------------

def dialogue_reward(
    recall: float,
    recall_max: float,
    rank: int | None,
    k: int = DEFAULT_K,
    alpha: float = DEFAULT_ALPHA,
    t: int = 0,
) -> RewardBreakdown:
    """Dialogue-level outcome reward.

    ``recall_max`` is the highest recall achieved across the candidate set
    being compared (1.0 when scoring a trajectory on its own); the ratio
    recall/recall_max gates the rank credit so a lucky diagnosis with thin
    information gathering earns little. ``rank`` is 1-based; None means the
    true diagnosis is outside the top-k and forces the total to 0.
    """
    if not (0.0 <= recall <= 1.0) or not (0.0 <= recall_max <= 1.0):
        raise DomainError("dialogue_reward: recall and recall_max must lie in [0, 1]")
    if recall > recall_max:
        raise DomainError("dialogue_reward: recall must not exceed recall_max")
    if recall_max == 0.0 and recall > 0.0:
        raise DomainError("dialogue_reward: recall_max = 0 requires recall = 0")
    if t < 0:
        raise DomainError("dialogue_reward: t must be >= 0")
    if rank is not None and not (1 <= rank <= k):
        raise DomainError(f"dialogue_reward: rank must be 1-based in [1, {k}]")

    ratio = 0.0 if recall_max == 0.0 else recall / recall_max
    turn_penalty = alpha * t / 2.0
    if rank is None:
        return RewardBreakdown(
            recall=recall,
            recall_max=recall_max,
            rank=None,
            rank_term=0.0,
            turn_penalty=turn_penalty,
            alpha=alpha,
            t=t,
            total=0.0,
        )
    rank_term = ratio * (1.0 - rank / k)
    total = recall + rank_term - turn_penalty
    return RewardBreakdown(
        recall=recall,
        recall_max=recall_max,
        rank=rank,
        rank_term=rank_term,
        turn_penalty=turn_penalty,
        alpha=alpha,
        t=t,
        total=total,
    )


def turn_reward(
    prev_state: DialogueState,
    new_state: DialogueState,
    action: Action,
    case: PatientCase,
    k: int = DEFAULT_K,
    rank: int | None = None,
) -> TurnReward:
    """Turn-level process reward.

    For Ask actions the value is the new-relevant-finding indicator; for
    Diagnose it is recall-so-far times the rank credit, 0 when the true
    diagnosis is outside the top-k (``rank`` comes from the judge).
    """
    ids = frozenset(case.finding_ids)
    if not prev_state.elicited <= ids or not new_state.elicited <= ids:
        raise DomainError("turn_reward: elicited sets must stay within the case's finding ids")
    if not prev_state.elicited <= new_state.elicited:
        raise DomainError("turn_reward: elicited set must not shrink")

    if isinstance(action, Ask):
        gained = new_state.elicited - prev_state.elicited
        return TurnReward(
            action_kind="ask",
            value=1.0 if gained else 0.0,
            new_finding_id=min(gained) if gained else None,
        )
    assert isinstance(action, Diagnose)
    if rank is not None and not (1 <= rank <= k):
        raise DomainError(f"turn_reward: rank must be 1-based in [1, {k}]")
    recall_t = len(new_state.elicited) / len(ids) if ids else 0.0
    value = 0.0 if rank is None else recall_t * (1.0 - rank / k)
    return TurnReward(action_kind="diagnose", value=value, recall_t=recall_t, rank_t=rank)


# -- judge-backed operations -------------------------------------------------

def render_conversation(turns: Sequence[tuple[str, str]] | Sequence[Turn]) -> str:
    """Number every utterance so the judge can cite turn indices."""
    lines = []
    for i, turn in enumerate(turns):
        if isinstance(turn, Turn):
            role, content = turn.role, turn.content
        else:
            role, content = turn
        lines.append(f"Turn {i} ({role}): {content}")
    return "\n".join(lines)


def render_note_sentences(case: PatientCase) -> str:
    return "\n".join(f"{f.finding_id}. {f.text}" for f in case.findings)


def align_findings(
    case: PatientCase,
    turns: Sequence[tuple[str, str]] | Sequence[Turn],
    judge: EndpointProfile,
    gateway: Gateway,
) -> FindingAlignment:
    """Map each case finding to the latest conversation turn mentioning it.

    One judge call per conversation; -1 survives as "never mentioned". An
    empty conversation aligns nothing and skips the call.
    """
    if len(turns) == 0:
        return FindingAlignment(aligned_turn={f.finding_id: -1 for f in case.findings})
    prompt = prompts.render(
        "finding_check",
        note_sentences="\n" + render_note_sentences(case),
        conversation="\n" + render_conversation(turns),
    )
    value = gateway.complete_json(judge, [user(prompt)], "finding_alignment", temperature=0.0)
    by_index = {int(item["index"]): int(item["turn"]) for item in value}
    aligned: dict[int, int] = {}
    n_turns = len(turns)
    for f in case.findings:
        turn = by_index.get(f.finding_id, -1)
        if turn >= n_turns:
            raise SchemaError(
                f"finding_alignment: turn {turn} out of range for {n_turns}-turn conversation",
                raw=json.dumps(value),
            )
        aligned[f.finding_id] = turn
    return FindingAlignment(aligned_turn=aligned)


def rank_diagnosis(
    dx: str,
    predicted: DiagnosisList,
    judge: EndpointProfile,
    gateway: Gateway,
) -> DiagnosisRank:
    """Judge the 0-based index of the first valid match (exact label or a
    more specific subtype of the ground truth); -1 and null mean no match."""
    prompt = prompts.render(
        "diagnosis_match",
        diagnosis=dx,
        ddx_list=json.dumps(list(predicted.entries), ensure_ascii=False),
    )
    value = gateway.complete_json(judge, [user(prompt)], "diagnosis_match", temperature=0.0)
    mi = value["match_index"]
    if mi is None or int(mi) < 0:
        return DiagnosisRank(match_index=None)
    mi = int(mi)
    if mi >= len(predicted.entries):
        raise SchemaError(
            f"diagnosis_match: match_index {mi} out of range for {len(predicted.entries)} candidates",
            raw=json.dumps(value),
        )
    return DiagnosisRank(match_index=mi)


@dataclass(frozen=True)
class ScoredTrajectory:
    trajectory: Trajectory
    alignment: FindingAlignment
    breakdown: RewardBreakdown
    turn_rewards: tuple[TurnReward, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.trajectory.to_dict(),
            "alignment": self.alignment.to_dict(),
            "breakdown": self.breakdown.to_dict(),
            "turn_rewards": [tr.to_dict() for tr in self.turn_rewards],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoredTrajectory":
        return cls(
            trajectory=Trajectory.from_dict(d),
            alignment=FindingAlignment.from_dict(d["alignment"]),
            breakdown=RewardBreakdown.from_dict(d["breakdown"]),
            turn_rewards=tuple(TurnReward.from_dict(tr) for tr in d["turn_rewards"]),
        )


def states_from_alignment(
    case: PatientCase, trajectory: Trajectory, alignment: FindingAlignment
) -> list[DialogueState]:
    """Reconstruct the per-exchange elicited sets from one alignment call.

    A finding counts as elicited at every turn at or after its aligned
    turn, so state t (after t doctor/patient exchanges) holds the findings
    aligned at message index <= 2t.
    """
    states: list[DialogueState] = []
    history: list[tuple[str, str]] = []
    cc = trajectory.turns[0].content if trajectory.turns else case.chief_complaint
    states.append(
        DialogueState(chief_complaint=cc, history=(), elicited=alignment.elicited_at(0))
    )
    t = 0
    for i in range(1, len(trajectory.turns) - 1, 2):
        doctor = trajectory.turns[i]
        patient = trajectory.turns[i + 1]
        if doctor.role != DOCTOR or patient.role == DOCTOR:
            break
        t += 1
        history.append((doctor.content, patient.content))
        states.append(
            DialogueState(
                chief_complaint=cc,
                history=tuple(history),
                elicited=alignment.elicited_at(2 * t),
            )
        )
    return states


def score_trajectory(
    case: PatientCase,
    trajectory: Trajectory,
    judge: EndpointProfile,
    gateway: Gateway,
    alpha: float = DEFAULT_ALPHA,
    k: int = DEFAULT_K,
    recall_max: float = 1.0,
    alignment: FindingAlignment | None = None,
) -> ScoredTrajectory:
    """Score one closed trajectory: one alignment call, one rank call (when
    a final differential exists), then both reward kernels.

    Judge failures propagate so callers can mark the trajectory unscored;
    nothing is silently zeroed. ``alignment`` may be passed in when a batch
    scorer already computed it (the two-pass recall_max flow).
    """
    if alignment is None:
        alignment = align_findings(case, trajectory.turns, judge, gateway)
    rank: int | None = None
    if trajectory.final_diagnoses is not None:
        rank = rank_diagnosis(case.dx, trajectory.final_diagnoses, judge, gateway).rank

    recall = alignment.recall()
    t = trajectory.num_doctor_questions
    breakdown = dialogue_reward(recall=recall, recall_max=recall_max, rank=rank, k=k, alpha=alpha, t=t)

    states = states_from_alignment(case, trajectory, alignment)
    turn_rewards: list[TurnReward] = []
    for i in range(len(states) - 1):
        question = trajectory.turns[2 * i + 1].content
        turn_rewards.append(
            turn_reward(states[i], states[i + 1], Ask(question=question), case, k=k)
        )
    if trajectory.final_diagnoses is not None:
        final_index = len(trajectory.turns) - 1
        final_state = DialogueState(
            chief_complaint=states[0].chief_complaint if states else case.chief_complaint,
            history=states[-1].history if states else (),
            elicited=alignment.elicited_at(final_index),
        )
        prev = states[-1] if states else final_state
        turn_rewards.append(
            turn_reward(prev, final_state, Diagnose(ranked=trajectory.final_diagnoses), case, k=k, rank=rank)
        )
    return ScoredTrajectory(
        trajectory=trajectory,
        alignment=alignment,
        breakdown=breakdown,
        turn_rewards=tuple(turn_rewards),
    )


def score_candidate_set(
    case: PatientCase,
    trajectories: Sequence[Trajectory],
    judge: EndpointProfile,
    gateway: Gateway,
    alpha: float = DEFAULT_ALPHA,
    k: int = DEFAULT_K,
) -> tuple[list[ScoredTrajectory], list[tuple[Trajectory, str]]]:
    """Two-pass scoring of one case's candidate pool: alignments first, so
    recall_max is the maximum recall observed across the pool.

    Judge failures mark the affected trajectory unscored (returned
    separately with the error) instead of zeroing it or sinking the pool.
    """
    from .gateway import GatewayError

    alignments: list[FindingAlignment | None] = []
    unscored: list[tuple[Trajectory, str]] = []
    for traj in trajectories:
        try:
            alignments.append(align_findings(case, traj.turns, judge, gateway))
        except GatewayError as exc:
            alignments.append(None)
            unscored.append((traj, f"align_findings: {type(exc).__name__}: {exc}"))
    recall_max = max((a.recall() for a in alignments if a is not None), default=0.0)
    scored: list[ScoredTrajectory] = []
    for traj, aln in zip(trajectories, alignments):
        if aln is None:
            continue
        try:
            scored.append(
                score_trajectory(
                    case,
                    traj,
                    judge,
                    gateway,
                    alpha=alpha,
                    k=k,
                    recall_max=recall_max,
                    alignment=aln,
                )
            )
        except GatewayError as exc:
            unscored.append((traj, f"score_trajectory: {type(exc).__name__}: {exc}"))
    return scored, unscored
