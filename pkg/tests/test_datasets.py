from __future__ import annotations

import random

import pytest

from anamnesis import prompts
from anamnesis.agents import parse_reasoning
from anamnesis.datasets import (
    TurnCandidate,
    build_mt_pairs,
    build_st_pairs,
    decompose_to_turns,
    dialogue_to_messages,
    export_sft,
    generate_reasoning_blocks,
    select_self_augmented,
    sft_record_from_turns,
)
from anamnesis.domain import DiagnosisList, DomainError, Trajectory, Turn
from anamnesis.gateway import ChatMessage, EndpointProfile
from anamnesis.rewards import FindingAlignment, RewardBreakdown, ScoredTrajectory

from conftest import ScriptedTransport, make_gateway, ok_body


def _turns(t: int, diagnosed: bool = True) -> tuple[Turn, ...]:
    turns = [Turn(0, "patient", "opener")]
    for i in range(t):
        turns.append(Turn(len(turns), "doctor", f"q{i}?"))
        turns.append(Turn(len(turns), "patient", f"r{i}"))
    if diagnosed:
        turns.append(
            Turn(len(turns), "doctor", DiagnosisList(entries=("A", "B", "C", "D", "E")).render())
        )
    return tuple(turns)


def _scored(case_id: str, total: float, recall: float = 0.5, rank=1, t: int = 2, sid: str = "s"):
    turns = _turns(t, diagnosed=rank is not None)
    traj = Trajectory(
        case_id=case_id,
        turns=turns,
        terminated_by="diagnosis" if rank is not None else "turn_cap",
        num_doctor_questions=t,
        final_diagnoses=DiagnosisList(entries=("A", "B", "C", "D", "E")) if rank is not None else None,
        session_id=sid,
    )
    return ScoredTrajectory(
        trajectory=traj,
        alignment=FindingAlignment(aligned_turn={0: 0}),
        breakdown=RewardBreakdown(
            recall=recall, recall_max=1.0, rank=rank, rank_term=0.0,
            turn_penalty=0.0, alpha=0.02, t=t, total=total,
        ),
        turn_rewards=(),
    )


# -- SFT export -------------------------------------------------------------

def test_export_sft_happy_path():
    records, skipped = export_sft([("c1", list(_turns(2)))])
    assert not skipped
    record = records[0]
    assert record.messages[0].role == "system"
    assert record.messages[-1].role == "assistant"
    assert record.provenance == "curated"


def test_export_sft_skips_invalid_with_reason():
    bad = [Turn(0, "doctor", "starts wrong"), Turn(1, "patient", "reply")]
    records, skipped = export_sft([("c1", bad), ("c2", list(_turns(1)))])
    assert len(records) == 1
    assert skipped[0]["case_id"] == "c1" and "expected patient" in skipped[0]["reason"]


def test_sft_must_end_on_doctor_turn():
    record, reason = sft_record_from_turns("c", list(_turns(1, diagnosed=False)), "curated")
    assert record is None and "end on a doctor turn" in reason


# -- self-augmentation selection ------------------------------------------------

def test_select_picks_max_recall_with_rank(case):
    pool = [
        _scored(case.case_id, 1.0, recall=0.6, rank=1, sid="a"),
        _scored(case.case_id, 1.2, recall=0.9, rank=2, sid="b"),
        _scored(case.case_id, 0.0, recall=0.95, rank=None, sid="c"),
    ]
    chosen = select_self_augmented(case, pool)
    assert [c.trajectory.session_id for c in chosen] == ["b"]


def test_select_empty_when_no_rank(case):
    pool = [_scored(case.case_id, 0.0, rank=None, sid="a")]
    assert select_self_augmented(case, pool) == []


def test_select_ties_break_to_fewer_questions(case):
    pool = [
        _scored(case.case_id, 1.0, recall=0.8, rank=1, t=9, sid="long"),
        _scored(case.case_id, 1.0, recall=0.8, rank=1, t=6, sid="short"),
    ]
    assert select_self_augmented(case, pool)[0].trajectory.session_id == "short"


def test_select_final_tie_breaks_to_earliest_session_id(case):
    pool = [
        _scored(case.case_id, 1.0, recall=0.8, rank=1, t=6, sid="s-b"),
        _scored(case.case_id, 1.0, recall=0.8, rank=1, t=6, sid="s-a"),
    ]
    assert select_self_augmented(case, pool)[0].trajectory.session_id == "s-a"


# -- mu/sigma dialogue pairs ------------------------------------------------------

def _pool(case_id: str, totals: list[float]):
    return [_scored(case_id, t, sid=f"s{i:02d}") for i, t in enumerate(totals)]


def test_all_equal_totals_make_zero_pairs(case):
    pairs, stats = build_mt_pairs(case, _pool(case.case_id, [1.0] * 5))
    assert pairs == [] and stats.high_count == 0 and stats.low_count == 0


def test_single_outlier_distribution_makes_zero_pairs(case):
    pairs, stats = build_mt_pairs(case, _pool(case.case_id, [0, 0, 0, 0, 10]))
    assert stats.mu == pytest.approx(2.0) and stats.sigma == pytest.approx(4.0)
    assert stats.high_count == 1 and stats.low_count == 0 and pairs == []


def test_worked_distribution_makes_one_pair(case):
    totals = [0, 1, 1, 1, 1, 1, 1, 1, 1, 2]
    pairs, stats = build_mt_pairs(case, _pool(case.case_id, totals))
    assert stats.mu == pytest.approx(1.0)
    assert stats.sigma == pytest.approx(0.4472135954999579)
    assert stats.high_count == 1 and stats.low_count == 1 and len(pairs) == 1
    pair = pairs[0]
    assert pair.chosen_reward == 2 and pair.rejected_reward == 0
    assert pair.granularity == "dialogue"


def test_pairs_take_lowest_totals_first(case):
    totals = [0.0, 0.1, 1.0, 1.0, 1.0, 1.0, 2.4, 1.0, 1.0, 1.0]
    pairs, stats = build_mt_pairs(case, _pool(case.case_id, totals))
    assert stats.high_count == 1 and stats.low_count == 2
    assert len(pairs) == 2
    assert [p.rejected_reward for p in pairs] == [0.0, 0.1]


def test_pair_count_bound_random_vectors(case):
    rng = random.Random(3)
    for _ in range(200):
        totals = [rng.uniform(-1, 2) for _ in range(rng.randint(2, 20))]
        pairs, stats = build_mt_pairs(case, _pool(case.case_id, totals))
        assert stats.pair_count <= 2 * stats.high_count
        assert all(p.chosen_reward > p.rejected_reward for p in pairs)


def test_mt_pairs_requires_two_candidates(case):
    with pytest.raises(DomainError):
        build_mt_pairs(case, _pool(case.case_id, [1.0]))


def test_mt_pairs_deterministic_bytes(case):
    totals = [0.0, 0.5, 1.0, 1.5, 2.5, 0.1]
    a, _ = build_mt_pairs(case, _pool(case.case_id, totals))
    b, _ = build_mt_pairs(case, _pool(case.case_id, totals))
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]


def test_mt_pairs_seeded_sampling_flag(case):
    totals = [0.0, 0.05, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 2.8]
    rng = random.Random(11)
    pairs, stats = build_mt_pairs(case, _pool(case.case_id, totals), rng=rng)
    assert stats.high_count == 1 and stats.low_count == 2
    assert len(pairs) == 2
    assert all(p.chosen_reward > p.rejected_reward for p in pairs)


# -- single-turn decomposition ------------------------------------------------------

def test_decompose_lossless():
    turns = list(_turns(3))
    units = decompose_to_turns("c1", turns)
    assert len(units) == 4  # three asks + the diagnosis turn
    system_prompt = prompts.load_template("doctor_fine_tuned")
    full = dialogue_to_messages(turns, system_prompt)
    for unit in units:
        # every context is a strict prefix of the full rendering
        assert list(unit.context) == full[: len(unit.context)]
    last = units[-1]
    assert list(last.context) + [ChatMessage("assistant", last.response)] == full


def test_generate_reasoning_blocks_renders_think():
    turns = list(_turns(1))
    unit = decompose_to_turns("c1", turns)[1]  # diagnosis turn
    endpoint = EndpointProfile(base_url="http://example.test", model_name="m")
    gw = make_gateway(
        ScriptedTransport([(200, ok_body("Summary text.")), (200, ok_body("Plan text."))])
    )
    enriched = generate_reasoning_blocks(unit, endpoint, gw)
    block, visible = parse_reasoning(enriched.response)
    assert block.summary == "Summary text." and block.plan == "Plan text."
    assert visible == unit.response
    # The diagnosis turn used the differential-variant plan prompt.
    plan_call = gw.records[-1].messages[0]["content"]
    assert "(preliminary diagnoses)" in plan_call


def test_generate_reasoning_blocks_keeps_existing_think():
    unit_ctx = (ChatMessage("system", "s"), ChatMessage("user", "u"))
    from anamnesis.datasets import TurnUnit

    unit = TurnUnit(case_id="c", turn_index=1, context=unit_ctx, response="<think>Summary: a\nPlan: b</think>q?")
    endpoint = EndpointProfile(base_url="http://example.test", model_name="m")
    gw = make_gateway(ScriptedTransport([]))
    assert generate_reasoning_blocks(unit, endpoint, gw) is unit


# -- single-turn pairs ----------------------------------------------------------------

CTX = (ChatMessage("system", "s"), ChatMessage("user", "opener"))


def test_st_pair_argmax_argmin():
    cands = [
        TurnCandidate(response="a?", visible="a?", reward=1.0),
        TurnCandidate(response="b?", visible="b?", reward=0.0),
        TurnCandidate(response="c?", visible="c?", reward=0.0),
    ]
    pairs = build_st_pairs("c1", CTX, cands)
    assert len(pairs) == 1
    assert pairs[0].chosen == "a?" and pairs[0].rejected == "b?"  # tie -> shorter, then lexicographic


def test_st_pairs_all_equal_rewards_skipped():
    cands = [TurnCandidate(response=t, visible=t, reward=0.0) for t in ("a?", "b?")]
    assert build_st_pairs("c1", CTX, cands) == []


def test_st_pair_diagnose_values():
    cands = [
        TurnCandidate(response="d1", visible="d1", reward=0.3),
        TurnCandidate(response="d2", visible="d2", reward=0.48),
    ]
    pairs = build_st_pairs("c1", CTX, cands)
    assert pairs[0].chosen == "d2" and pairs[0].chosen_reward == pytest.approx(0.48)


def test_st_pair_tiebreak_prefers_shorter_visible():
    cands = [
        TurnCandidate(response="longer question?", visible="longer question?", reward=1.0),
        TurnCandidate(response="short?", visible="short?", reward=1.0),
        TurnCandidate(response="x?", visible="x?", reward=0.0),
    ]
    pairs = build_st_pairs("c1", CTX, cands)
    assert pairs[0].chosen == "short?"
