"""Training-data exports: SFT corpus, self-augmentation selection,
dialogue-level preference pairs, single-turn decomposition with generated
reasoning blocks, and turn-level preference pairs.

Pair construction is deterministic end to end. For dialogue pairs, a
candidate pool's totals are split on the population mean and standard
deviation: totals strictly above mu + sigma are high-quality, strictly
below mu - sigma low-quality, and each high is paired with up to two lows,
worst totals first (an optional seeded sampler restores the sampled-partner
variant). Turn pairs contrast the highest- and lowest-reward candidate for
one context; ask and diagnose candidates share the one reward scale and may
be paired across kinds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from statistics import fmean, pstdev
from typing import Any, Mapping, Sequence

from . import prompts
from .agents import (
    DoctorProfile,
    PatientProfile,
    contains_diagnosis_marker,
    parse_diagnoses,
    parse_reasoning,
    render_reasoning,
)
from .domain import (
    DEFAULT_K,
    DOCTOR,
    PATIENT,
    DialogueState,
    DomainError,
    PatientCase,
    ReasoningBlock,
    Trajectory,
    Turn,
)
from .gateway import ChatMessage, EndpointProfile, Gateway, user
from .rewards import (
    Ask,
    Diagnose,
    ScoredTrajectory,
    align_findings,
    rank_diagnosis,
    turn_reward,
)

SFT_SYSTEM_PROMPT_ID = "doctor_fine_tuned"


@dataclass(frozen=True)
class SftRecord:
    case_id: str
    provenance: str  # "curated" | "self_augmented"
    messages: tuple[ChatMessage, ...]
    system_prompt_id: str = SFT_SYSTEM_PROMPT_ID

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "provenance": self.provenance,
            "system_prompt_id": self.system_prompt_id,
            "messages": [m.to_dict() for m in self.messages],
        }


@dataclass(frozen=True)
class PreferencePair:
    """(context, chosen, rejected) with strictly ordered rewards."""

    case_id: str
    granularity: str  # "dialogue" | "turn"
    context: tuple[ChatMessage, ...]
    chosen: str
    rejected: str
    chosen_reward: float
    rejected_reward: float

    def __post_init__(self) -> None:
        if not self.chosen_reward > self.rejected_reward:
            raise DomainError("PreferencePair: chosen_reward must exceed rejected_reward")

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "granularity": self.granularity,
            "context": [m.to_dict() for m in self.context],
            "chosen": self.chosen,
            "rejected": self.rejected,
            "chosen_reward": self.chosen_reward,
            "rejected_reward": self.rejected_reward,
        }


@dataclass(frozen=True)
class SelectionStats:
    mu: float
    sigma: float
    high_count: int
    low_count: int
    pair_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "high_count": self.high_count,
            "low_count": self.low_count,
            "pair_count": self.pair_count,
        }


# -- SFT export --------------------------------------------------------------

def dialogue_to_messages(turns: Sequence[Turn], system_prompt: str) -> list[ChatMessage]:
    """Chat rendering with the doctor as the assistant (the supervised
    target); reasoning blocks, when present, are folded back into the
    assistant text so trainers see what the model must emit."""
    msgs = [ChatMessage("system", system_prompt)]
    for turn in turns:
        if turn.role == DOCTOR:
            content = (
                render_reasoning(turn.reasoning, turn.content)
                if turn.reasoning is not None
                else turn.content
            )
            msgs.append(ChatMessage("assistant", content))
        else:
            msgs.append(ChatMessage("user", turn.content))
    return msgs


def sft_record_from_turns(
    case_id: str, turns: Sequence[Turn], provenance: str
) -> tuple[SftRecord | None, str | None]:
    """Build one SFT record; returns (record, None) or (None, reason)."""
    if len(turns) < 2:
        return None, "dialogue has fewer than 2 turns"
    for i, turn in enumerate(turns):
        expected = PATIENT if i % 2 == 0 else DOCTOR
        if turn.role != expected:
            return None, f"turn {i}: expected {expected}, got {turn.role}"
        if not turn.content.strip():
            return None, f"turn {i}: empty content"
    if turns[-1].role != DOCTOR:
        return None, "dialogue must end on a doctor turn"
    system_prompt = prompts.load_template(SFT_SYSTEM_PROMPT_ID)
    return SftRecord(
        case_id=case_id,
        provenance=provenance,
        messages=tuple(dialogue_to_messages(turns, system_prompt)),
    ), None


def export_sft(
    dialogues: Sequence[tuple[str, Sequence[Turn]]],
    provenance: str = "curated",
) -> tuple[list[SftRecord], list[dict[str, str]]]:
    """One record per dialogue; invalid dialogues are skipped and reported,
    never silently dropped."""
    records: list[SftRecord] = []
    skipped: list[dict[str, str]] = []
    for case_id, turns in dialogues:
        record, reason = sft_record_from_turns(case_id, turns, provenance)
        if record is None:
            skipped.append({"case_id": case_id, "reason": reason or "invalid"})
        else:
            records.append(record)
    return records, skipped


# -- self-augmentation selection ----------------------------------------------

def select_self_augmented(
    case: PatientCase, scored: Sequence[ScoredTrajectory]
) -> list[ScoredTrajectory]:
    """Among rollouts whose differential contains the true diagnosis, keep
    the highest-recall one; ties break to fewer doctor questions, then to
    the earliest session id. Empty when no rollout ranked the diagnosis."""
    eligible = [s for s in scored if s.breakdown.rank is not None]
    if not eligible:
        return []
    best = min(
        eligible,
        key=lambda s: (
            -s.breakdown.recall,
            s.trajectory.num_doctor_questions,
            s.trajectory.session_id,
        ),
    )
    return [best]


# -- dialogue-level preference pairs -------------------------------------------

def render_transcript(turns: Sequence[Turn], skip: int = 0) -> str:
    """Plain-text continuation used as the pair's completion string."""
    lines = []
    for turn in turns[skip:]:
        lines.append(f"{turn.role.capitalize()}: {turn.content}")
    return "\n".join(lines)


def build_mt_pairs(
    case: PatientCase,
    scored: Sequence[ScoredTrajectory],
    max_low_per_high: int = 2,
    rng: random.Random | None = None,
) -> tuple[list[PreferencePair], SelectionStats]:
    """Mean/std split of a case's candidate totals into preference pairs.

    Requires at least two scored candidates. Zero pairs is a normal outcome
    (e.g. all totals equal). Passing ``rng`` samples the low partners
    instead of taking the worst-first deterministic order.
    """
    if len(scored) < 2:
        raise DomainError("build_mt_pairs: need at least 2 scored trajectories")
    totals = [s.breakdown.total for s in scored]
    mu = fmean(totals)
    sigma = pstdev(totals)
    highs = [s for s in scored if s.breakdown.total > mu + sigma]
    lows = [s for s in scored if s.breakdown.total < mu - sigma]
    lows_sorted = sorted(lows, key=lambda s: (s.breakdown.total, s.trajectory.session_id))

    system_prompt = prompts.load_template(SFT_SYSTEM_PROMPT_ID)
    pairs: list[PreferencePair] = []
    for high in sorted(highs, key=lambda s: (-s.breakdown.total, s.trajectory.session_id)):
        if rng is not None:
            partners = rng.sample(lows_sorted, k=min(max_low_per_high, len(lows_sorted)))
        else:
            partners = lows_sorted[:max_low_per_high]
        for low in partners:
            opener = high.trajectory.turns[0].content if high.trajectory.turns else case.chief_complaint
            pairs.append(
                PreferencePair(
                    case_id=case.case_id,
                    granularity="dialogue",
                    context=(ChatMessage("system", system_prompt), ChatMessage("user", opener)),
                    chosen=render_transcript(high.trajectory.turns, skip=1),
                    rejected=render_transcript(low.trajectory.turns, skip=1),
                    chosen_reward=high.breakdown.total,
                    rejected_reward=low.breakdown.total,
                )
            )
    stats = SelectionStats(
        mu=mu,
        sigma=sigma,
        high_count=len(highs),
        low_count=len(lows),
        pair_count=len(pairs),
    )
    return pairs, stats


# -- single-turn decomposition --------------------------------------------------

@dataclass(frozen=True)
class TurnUnit:
    """One doctor decision with everything that preceded it."""

    case_id: str
    turn_index: int
    context: tuple[ChatMessage, ...]
    response: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "turn_index": self.turn_index,
            "context": [m.to_dict() for m in self.context],
            "response": self.response,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TurnUnit":
        return cls(
            case_id=str(d["case_id"]),
            turn_index=int(d["turn_index"]),
            context=tuple(ChatMessage(m["role"], m["content"]) for m in d["context"]),
            response=str(d["response"]),
        )


def decompose_to_turns(case_id: str, turns: Sequence[Turn]) -> list[TurnUnit]:
    """One unit per doctor turn; the context is every prior turn rendered
    as chat messages. Replaying contexts plus responses in order
    reconstructs the dialogue losslessly."""
    system_prompt = prompts.load_template(SFT_SYSTEM_PROMPT_ID)
    units: list[TurnUnit] = []
    for i, turn in enumerate(turns):
        if turn.role != DOCTOR:
            continue
        context = dialogue_to_messages(turns[:i], system_prompt)
        response = (
            render_reasoning(turn.reasoning, turn.content)
            if turn.reasoning is not None
            else turn.content
        )
        units.append(
            TurnUnit(case_id=case_id, turn_index=i, context=tuple(context), response=response)
        )
    return units


def _context_conversation(context: Sequence[ChatMessage]) -> str:
    lines = []
    for m in context:
        if m.role == "system":
            continue
        role = DOCTOR if m.role == "assistant" else PATIENT
        content = m.content
        if m.role == "assistant":
            _, content = parse_reasoning(m.content, strict=False)
        lines.append(f"{role}: {content}")
    return "\n".join(lines)


def generate_reasoning_blocks(
    unit: TurnUnit, llm: EndpointProfile, gateway: Gateway
) -> TurnUnit:
    """Attach a summary+plan block to one unit's response.

    The summary rewrites the prior conversation; the plan explains the next
    action (the differential-diagnosis variant when the response carries the
    diagnosis marker). Units whose response already opens a think block are
    returned unchanged.
    """
    if unit.response.lstrip().startswith("<think>"):
        return unit
    conversation = _context_conversation(unit.context)
    if not conversation:
        raise DomainError("generate_reasoning_blocks: unit context is empty")
    summary = gateway.complete(
        llm, [user(prompts.render("history_summarization", conversation=conversation))]
    ).strip()
    plan_template = (
        "differential_diagnosis_reasoning"
        if contains_diagnosis_marker(unit.response)
        else "clinical_plan"
    )
    plan = gateway.complete(
        llm,
        [user(prompts.render(plan_template, conversation_summary=summary, next_action=unit.response))],
    ).strip()
    block = ReasoningBlock(summary=summary, plan=plan, raw=f"Summary: {summary}\nPlan: {plan}")
    return TurnUnit(
        case_id=unit.case_id,
        turn_index=unit.turn_index,
        context=unit.context,
        response=render_reasoning(block, unit.response),
    )


# -- single-turn candidates and pairs ---------------------------------------------

@dataclass(frozen=True)
class TurnCandidate:
    response: str  # raw doctor reply, think block included when present
    visible: str
    reward: float

    def to_dict(self) -> dict[str, Any]:
        return {"response": self.response, "visible": self.visible, "reward": self.reward}


def build_st_pairs(
    case_id: str,
    context: Sequence[ChatMessage],
    candidates: Sequence[TurnCandidate],
) -> list[PreferencePair]:
    """Contrast the highest- and lowest-reward candidate for one context.

    Skipped when all rewards tie; ties within a side break to shorter
    visible text, then lexicographically.
    """
    if len(candidates) < 2:
        return []
    ordered_best = sorted(candidates, key=lambda c: (-c.reward, len(c.visible), c.visible))
    ordered_worst = sorted(candidates, key=lambda c: (c.reward, len(c.visible), c.visible))
    best, worst = ordered_best[0], ordered_worst[0]
    if best.reward == worst.reward:
        return []
    return [
        PreferencePair(
            case_id=case_id,
            granularity="turn",
            context=tuple(context),
            chosen=best.response,
            rejected=worst.response,
            chosen_reward=best.reward,
            rejected_reward=worst.reward,
        )
    ]


def _state_from_context(context: Sequence[ChatMessage]) -> DialogueState:
    turns = [m for m in context if m.role != "system"]
    cc = turns[0].content if turns else ""
    history: list[tuple[str, str]] = []
    i = 1
    while i + 1 < len(turns):
        q = turns[i]
        r = turns[i + 1]
        q_text = parse_reasoning(q.content, strict=False)[1]
        history.append((q_text, r.content))
        i += 2
    return DialogueState(chief_complaint=cc, history=tuple(history))


def _conversation_pairs(context: Sequence[ChatMessage]) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    for m in context:
        if m.role == "system":
            continue
        role = DOCTOR if m.role == "assistant" else PATIENT
        content = parse_reasoning(m.content, strict=False)[1] if m.role == "assistant" else m.content
        out.append((role, content))
    return out


def rollout_st_candidates(
    case: PatientCase,
    unit: TurnUnit,
    doctor: DoctorProfile,
    patient: PatientProfile,
    judge: EndpointProfile,
    gateway: Gateway,
    n_candidates: int = 10,
    k: int = DEFAULT_K,
    seed: int = 0,
) -> list[TurnCandidate]:
    """Sample candidate responses for a unit's context and reward each with
    the turn-level kernel.

    Ask candidates are extended by one simulated patient reply; the
    alignment judge then decides whether that exchange surfaced a new
    finding. Diagnose candidates are scored by recall-so-far times rank
    credit. One context-only alignment call is shared by all candidates.
    """
    conversation = _conversation_pairs(unit.context)
    base_alignment = align_findings(case, conversation, judge, gateway)
    base_index = len(conversation) - 1
    base_elicited = base_alignment.elicited_at(base_index)
    state = _state_from_context(unit.context)
    prev = DialogueState(
        chief_complaint=state.chief_complaint, history=state.history, elicited=base_elicited
    )

    candidates: list[TurnCandidate] = []
    for j in range(n_candidates):
        cand_seed = seed * 1000 + j
        raw = gateway.complete(doctor.endpoint, list(unit.context), seed=cand_seed)
        block, visible = (
            parse_reasoning(raw, strict=False)
            if doctor.reasoning_mode == "single_turn"
            else (None, raw.strip())
        )
        if contains_diagnosis_marker(visible):
            try:
                ranked = parse_diagnoses(visible, k=k)
            except Exception:
                candidates.append(TurnCandidate(response=raw, visible=visible, reward=0.0))
                continue
            rank = rank_diagnosis(case.dx, ranked, judge, gateway).rank
            new = DialogueState(
                chief_complaint=prev.chief_complaint, history=prev.history, elicited=base_elicited
            )
            tr = turn_reward(prev, new, Diagnose(ranked=ranked), case, k=k, rank=rank)
            candidates.append(TurnCandidate(response=raw, visible=visible, reward=tr.value))
        else:
            reply = gateway.complete(
                patient.endpoint,
                _patient_view(patient, unit.context, visible),
                seed=cand_seed,
            ).strip()
            extended = conversation + [(DOCTOR, visible), (PATIENT, reply)]
            alignment = align_findings(case, extended, judge, gateway)
            new_elicited = alignment.elicited_at(len(extended) - 1)
            # Keep monotone even if the latest-turn convention moved a
            # finding's credit backward out of the context window.
            new_elicited = new_elicited | base_elicited
            new = DialogueState(
                chief_complaint=prev.chief_complaint,
                history=prev.history + ((visible, reply),),
                elicited=new_elicited,
            )
            tr = turn_reward(prev, new, Ask(question=visible), case, k=k)
            candidates.append(TurnCandidate(response=raw, visible=visible, reward=tr.value))
    return candidates


def _patient_view(
    patient: PatientProfile, context: Sequence[ChatMessage], question: str
) -> list[ChatMessage]:
    from .agents import patient_messages

    state = _state_from_context(context)
    return patient_messages(patient, state, question)
