from __future__ import annotations

import hypothesis.strategies as st
import pytest
from hypothesis import given

from anamnesis.domain import (
    DiagnosisList,
    DomainError,
    Finding,
    PatientCase,
    SocratesCategory,
    Trajectory,
    Turn,
)
from anamnesis.evaluation import (
    CorpusMismatch,
    UncategorizedFindings,
    audit_patient,
    category_recall,
    compare_runs,
    corpus_report,
    render_report_table,
    trajectory_metrics,
)
from anamnesis.gateway import EndpointProfile
from anamnesis.rewards import FindingAlignment, RewardBreakdown, ScoredTrajectory

from conftest import make_gateway, ScriptedTransport


def test_worked_metrics_example():
    m = trajectory_metrics(elicited=4, rank=1, t=10, n_findings=8, k=5)
    assert m.precision == pytest.approx(0.4, abs=1e-12)
    assert m.recall == pytest.approx(0.5, abs=1e-12)
    assert m.f1 == pytest.approx(4 / 9, abs=1e-12)
    assert all(m.top_k_hits)


def test_empty_interview_convention():
    m = trajectory_metrics(elicited=0, rank=None, t=0, n_findings=8, k=5)
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


def test_rank_threshold_indicator():
    m = trajectory_metrics(elicited=1, rank=3, t=1, n_findings=2, k=5)
    assert m.top_k_hits == (False, False, True, True, True)


def test_precision_capped_at_one():
    m = trajectory_metrics(elicited=3, rank=None, t=1, n_findings=8, k=5)
    assert m.precision == 1.0


def test_metrics_preconditions():
    with pytest.raises(DomainError):
        trajectory_metrics(elicited=9, rank=None, t=1, n_findings=8)
    with pytest.raises(DomainError):
        trajectory_metrics(elicited=0, rank=None, t=0, n_findings=0)


@given(
    elicited=st.integers(0, 8),
    t=st.integers(0, 30),
    rank=st.sampled_from([None, 1, 2, 3, 4, 5]),
)
def test_f1_harmonic_bounds_and_topk_monotone(elicited, t, rank):
    m = trajectory_metrics(elicited=elicited, rank=rank, t=t, n_findings=8, k=5)
    assert 0.0 <= m.precision <= 1.0 and 0.0 <= m.recall <= 1.0
    assert m.f1 <= min(2 * m.precision, 2 * m.recall) + 1e-12
    assert (m.f1 == 0.0) == (m.precision * m.recall == 0.0)
    for a, b in zip(m.top_k_hits, m.top_k_hits[1:]):
        assert (not a) or b


def _scored(case_id: str, aligned: dict[int, int], rank, t: int, total: float = 0.5):
    n = len(aligned)
    turns = [Turn(0, "patient", "opener")]
    for i in range(t):
        turns.append(Turn(len(turns), "doctor", f"q{i}?"))
        turns.append(Turn(len(turns), "patient", f"r{i}"))
    final = None
    terminated = "turn_cap"
    if rank is not None:
        final = DiagnosisList(entries=("A", "B", "C", "D", "E"))
        turns.append(Turn(len(turns), "doctor", final.render()))
        terminated = "diagnosis"
    traj = Trajectory(
        case_id=case_id,
        turns=tuple(turns),
        terminated_by=terminated,
        num_doctor_questions=t,
        final_diagnoses=final,
        session_id=f"{case_id}-s",
    )
    elicited = sum(1 for v in aligned.values() if v >= 0)
    recall = elicited / n
    return ScoredTrajectory(
        trajectory=traj,
        alignment=FindingAlignment(aligned_turn=aligned),
        breakdown=RewardBreakdown(
            recall=recall,
            recall_max=1.0,
            rank=rank,
            rank_term=0.0,
            turn_penalty=0.0,
            alpha=0.02,
            t=t,
            total=total,
        ),
        turn_rewards=(),
    )


def test_corpus_report_means_over_cases():
    scored = [
        _scored("c1", {0: 0, 1: -1}, 1, 2),
        _scored("c2", {0: -1, 1: -1}, None, 1),
    ]
    report = corpus_report("run", scored, k=5)
    assert report.case_count == 2
    assert report.recall == pytest.approx((0.5 + 0.0) / 2)
    assert report.top_k[0] == pytest.approx(0.5)
    table = render_report_table(report)
    assert "F1" in table and "run" in table


def test_corpus_report_aggregated_recall_equals_mean_of_per_case_recalls():
    scored = [
        _scored("c1", {0: 0, 1: 2}, 1, 1),
        _scored("c1", {0: -1, 1: -1}, None, 1),
        _scored("c2", {0: 0, 1: -1}, 2, 3),
    ]
    report = corpus_report("run", scored, k=5)
    per_case = {"c1": (1.0 + 0.0) / 2, "c2": 0.5}
    assert report.recall == pytest.approx(sum(per_case.values()) / 2)


def test_category_recall_over_corpus():
    case = PatientCase(
        case_id="c1",
        dx="X",
        findings=(
            Finding(0, "a", SocratesCategory.ONSET),
            Finding(1, "b", SocratesCategory.ONSET),
            Finding(2, "c", SocratesCategory.SEVERITY),
        ),
        chief_complaint="cc",
    )
    alignments = {"c1": FindingAlignment(aligned_turn={0: 2, 1: -1, 2: 4})}
    result = category_recall([case], alignments)
    assert result["Onset"] == pytest.approx(0.5)
    assert result["Severity"] == pytest.approx(1.0)
    # Categories with zero findings are absent, not reported as 0.
    assert "Site" not in result


def test_category_recall_requires_categories(case):
    alignments = {case.case_id: FindingAlignment(aligned_turn={0: -1, 1: -1, 2: -1, 3: -1})}
    with pytest.raises(UncategorizedFindings):
        category_recall([case], alignments)


def test_audit_patient_clean_run(case, mock_gateway):
    judge = EndpointProfile(base_url="mock://scripted", model_name="judge")
    turns = (
        Turn(0, "patient", case.chief_complaint),
        Turn(1, "doctor", "When did it start?"),
        Turn(2, "patient", case.findings[0].text),
    )
    traj = Trajectory(
        case_id=case.case_id, turns=turns, terminated_by="turn_cap", num_doctor_questions=1
    )
    report = audit_patient([traj], {case.case_id: case}, judge, mock_gateway)
    assert report.information_control_rate == 100.0
    assert report.factual_conflict_rate == 0.0
    assert report.turns_audited == 1


def test_audit_patient_judge_failures_excluded(case):
    judge = EndpointProfile(base_url="http://example.test", model_name="judge", max_retries=0)
    turns = (
        Turn(0, "patient", "cc"),
        Turn(1, "doctor", "q?"),
        Turn(2, "patient", "r"),
    )
    traj = Trajectory(case_id=case.case_id, turns=turns, terminated_by="turn_cap", num_doctor_questions=1)
    gw = make_gateway(ScriptedTransport([(500, "x")]))
    report = audit_patient([traj], {case.case_id: case}, judge, gw)
    assert report.turns_audited == 0 and report.turns_skipped == 1


def test_compare_runs_deltas():
    a = corpus_report("a", [_scored("c1", {0: 0, 1: -1}, 1, 2)], k=5)
    b = corpus_report("b", [_scored("c1", {0: 0, 1: 2}, 1, 2)], k=5)
    delta = compare_runs(a, b)
    assert delta["metrics"]["recall"]["delta"] == pytest.approx(0.5)
    with pytest.raises(CorpusMismatch):
        compare_runs(a, corpus_report("c", [_scored("c1", {0: 0}, 1, 1), _scored("c2", {0: 0}, 1, 1)], k=5))
