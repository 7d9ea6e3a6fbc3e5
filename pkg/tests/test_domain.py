from __future__ import annotations

import hypothesis.strategies as st
import pytest
from hypothesis import given

from anamnesis.domain import (
    CaseCorpus,
    DiagnosisList,
    DomainError,
    Finding,
    PatientCase,
    ReasoningBlock,
    SocratesCategory,
    Trajectory,
    Turn,
    validate_case,
    validate_corpus,
    validate_trajectory,
)

from conftest import make_case

text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=40
).filter(lambda s: s.strip())


def test_validate_case_empty_findings():
    case = PatientCase(case_id="c", dx="x", findings=(), chief_complaint="cc")
    assert "findings: must be non-empty" in validate_case(case)


def test_validate_case_well_formed(case):
    assert validate_case(case) == []


def test_validate_case_duplicate_finding_id():
    case = PatientCase(
        case_id="c",
        dx="x",
        findings=(Finding(0, "a"), Finding(0, "b")),
        chief_complaint="cc",
    )
    assert "findings: ids must equal positions" in validate_case(case)


def test_validate_corpus_flags_duplicate_ids(case):
    corpus = CaseCorpus(cases=(case, case))
    assert any("duplicate case_id" in v for v in validate_corpus(corpus))


def test_socrates_has_exactly_nine_values():
    assert len(SocratesCategory) == 9
    assert {c.value for c in SocratesCategory} == {
        "Site",
        "Onset",
        "Character",
        "Radiation",
        "AssociatedSymptoms",
        "Timing",
        "ExacerbatingRelieving",
        "Severity",
        "History",
    }


def test_diagnosis_list_rules():
    dl = DiagnosisList(entries=("A", "B", "C", "D", "E"))
    assert dl.k == 5
    dl.require_k(5)
    with pytest.raises(DomainError):
        dl.require_k(3)
    with pytest.raises(DomainError):
        DiagnosisList(entries=())
    with pytest.raises(DomainError):
        DiagnosisList(entries=("A", " "))


def _trajectory(n_questions: int, diagnosed: bool) -> Trajectory:
    turns = [Turn(index=0, role="patient", content="opener")]
    for i in range(n_questions):
        turns.append(Turn(index=len(turns), role="doctor", content=f"q{i}?"))
        turns.append(Turn(index=len(turns), role="patient", content=f"r{i}"))
    final = None
    if diagnosed:
        final = DiagnosisList(entries=("A", "B", "C", "D", "E"))
        turns.append(Turn(index=len(turns), role="doctor", content=final.render()))
    return Trajectory(
        case_id="c",
        turns=tuple(turns),
        terminated_by="diagnosis" if diagnosed else "turn_cap",
        num_doctor_questions=n_questions,
        final_diagnoses=final,
    )


@pytest.mark.parametrize("n,diagnosed", [(0, True), (3, True), (2, False)])
def test_trajectory_invariants_hold(n, diagnosed):
    assert validate_trajectory(_trajectory(n, diagnosed)) == []


def test_trajectory_final_diagnoses_iff_diagnosis():
    bad = Trajectory(
        case_id="c",
        turns=(Turn(0, "patient", "hi"),),
        terminated_by="diagnosis",
        num_doctor_questions=0,
        final_diagnoses=None,
    )
    assert any("final_diagnoses" in v for v in validate_trajectory(bad))


def test_trajectory_question_count_checked():
    t = _trajectory(3, True)
    wrong = Trajectory(
        case_id=t.case_id,
        turns=t.turns,
        terminated_by=t.terminated_by,
        num_doctor_questions=99,
        final_diagnoses=t.final_diagnoses,
    )
    assert any("num_doctor_questions" in v for v in validate_trajectory(wrong))


def test_patient_reasoning_rejected():
    block = ReasoningBlock(summary="s", plan="p", raw="Summary: s\nPlan: p")
    turns = (Turn(0, "patient", "hi", reasoning=block),)
    traj = Trajectory(case_id="c", turns=turns, terminated_by="error", num_doctor_questions=0)
    assert any("no reasoning" in v for v in validate_trajectory(traj))


# -- serialization round-trips ---------------------------------------------

@given(finding_id=st.integers(0, 50), t=text, cat=st.sampled_from([None, *SocratesCategory]))
def test_finding_roundtrip(finding_id, t, cat):
    f = Finding(finding_id=finding_id, text=t, category=cat)
    assert Finding.from_dict(f.to_dict()) == f


@given(texts=st.lists(text, min_size=1, max_size=5), dx=text, cc=text)
def test_case_roundtrip(texts, dx, cc):
    case = PatientCase(
        case_id="c",
        dx=dx,
        findings=tuple(Finding(i, t) for i, t in enumerate(texts)),
        chief_complaint=cc,
        hpi=" ".join(texts),
    )
    assert PatientCase.from_dict(case.to_dict()) == case


@given(n=st.integers(0, 4), diagnosed=st.booleans())
def test_trajectory_roundtrip(n, diagnosed):
    traj = _trajectory(n, diagnosed)
    assert Trajectory.from_dict(traj.to_dict()) == traj


def test_corpus_helpers(case):
    corpus = CaseCorpus(cases=(case, make_case(case_id="case-2")))
    assert corpus.by_id("case-2").case_id == "case-2"
    assert corpus.by_id("missing") is None
    assert corpus.split_counts() == {"train": 2}
