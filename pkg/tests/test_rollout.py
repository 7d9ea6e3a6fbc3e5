from __future__ import annotations

import pytest

from anamnesis.agents import DoctorProfile, PatientProfile
from anamnesis.domain import CaseCorpus, validate_trajectory
from anamnesis.gateway import EndpointProfile
from anamnesis.mockmodel import routing_transport
from anamnesis.rollout import (
    Campaign,
    NotYourTurn,
    SessionClosed,
    SessionConfig,
    UnknownCase,
    advance,
    open_session,
    run_campaign,
    run_to_completion,
    submit_human_diagnosis,
    submit_human_turn,
)

from conftest import make_gateway, ok_body

ENDPOINT = EndpointProfile(base_url="http://example.test", model_name="m")
DIAGNOSIS_TEXT = "Preliminary diagnoses:\n1. A\n2. B\n3. C\n4. D\n5. E"


def role_router(doctor_fn, patient_fn):
    """Transport that scripts the doctor and patient separately; the system
    prompt decides who is being asked."""

    def transport(profile, payload, timeout_s):
        sys_text = payload["messages"][0]["content"]
        if "**Case Vignette**:" in sys_text:
            text = patient_fn(payload)
        else:
            text = doctor_fn(payload)
        return 200, ok_body(text)

    return transport


def scripted_doctor(n_questions: int, diagnose: bool = True):
    def doctor(payload):
        asked = sum(1 for m in payload["messages"] if m["role"] == "assistant")
        if asked < n_questions:
            return f"Scripted question {asked + 1}?"
        if diagnose:
            return DIAGNOSIS_TEXT
        return f"Scripted question {asked + 1}?"

    return doctor


def echo_patient(payload):
    question = payload["messages"][-1]["content"]
    return f"Answer to: {question}"


def _session_config(case, max_turns=40, doctor=None, seed=0):
    return SessionConfig(
        case_id=case.case_id,
        patient=PatientProfile(endpoint=ENDPOINT, vignette="v. f1. f2."),
        doctor=doctor,
        max_turns=max_turns,
        seed=seed,
        opening_statement=case.chief_complaint,
    )


def _corpus(case):
    return CaseCorpus(cases=(case,))


def test_open_session_places_opener(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    session = open_session(_corpus(case), _session_config(case), gw)
    assert session.turns[0].role == "patient"
    assert session.turns[0].content == case.chief_complaint
    assert session.status == "awaiting_doctor"


def test_open_session_unknown_case(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    config = SessionConfig(
        case_id="missing", patient=PatientProfile(endpoint=ENDPOINT, vignette="v."),
        doctor=DoctorProfile(endpoint=ENDPOINT),
    )
    with pytest.raises(UnknownCase):
        open_session(_corpus(case), config, gw)


def test_immediate_diagnosis_gives_degenerate_trajectory(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    config = _session_config(case, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    traj = run_to_completion(session, gw)
    assert traj.num_doctor_questions == 0
    assert traj.terminated_by == "diagnosis"
    assert len([t for t in traj.turns if t.role == "patient"]) == 1
    assert validate_trajectory(traj) == []


def test_three_questions_then_diagnosis_is_eight_turns(case):
    gw = make_gateway(role_router(scripted_doctor(3), echo_patient))
    config = _session_config(case, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    traj = run_to_completion(session, gw)
    assert traj.num_doctor_questions == 3
    assert traj.total_turns == 8  # opener + 3 exchanges + diagnosis turn
    assert traj.terminated_by == "diagnosis"
    assert validate_trajectory(traj) == []


def test_never_diagnosing_doctor_hits_cap_and_forced_call_parses(case):
    def doctor(payload):
        sys_text = payload["messages"][0]["content"]
        if sys_text.startswith("You are an AI doctor. Based on the patient's answers so far"):
            return DIAGNOSIS_TEXT
        return "Another question?"

    gw = make_gateway(role_router(doctor, echo_patient))
    config = _session_config(case, max_turns=5, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    traj = run_to_completion(session, gw)
    assert traj.num_doctor_questions == 5
    assert traj.terminated_by == "diagnosis"
    assert traj.final_diagnoses is not None
    assert validate_trajectory(traj) == []


def test_cap_with_unparseable_forced_reply_closes_turn_cap(case):
    gw = make_gateway(role_router(lambda p: "No list from me.", echo_patient))
    config = _session_config(case, max_turns=2, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    traj = run_to_completion(session, gw)
    assert traj.terminated_by == "turn_cap"
    assert traj.final_diagnoses is None
    assert traj.num_doctor_questions == 2
    assert validate_trajectory(traj) == []


def test_agent_error_closes_session_as_error(case):
    def doctor(payload):
        return "Preliminary diagnoses:\n1. only\n2. four\n3. items\n4. here"

    gw = make_gateway(role_router(doctor, echo_patient))
    config = _session_config(case, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    traj = run_to_completion(session, gw)
    assert traj.terminated_by == "error"
    assert "WrongCount" in session.error
    assert validate_trajectory(traj) == []


def test_advance_after_close_raises(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    config = _session_config(case, doctor=DoctorProfile(endpoint=ENDPOINT))
    session = open_session(_corpus(case), config, gw)
    run_to_completion(session, gw)
    with pytest.raises(SessionClosed):
        advance(session, gw)


# -- human sessions -----------------------------------------------------------

def test_human_turn_roundtrip(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    session = open_session(_corpus(case), _session_config(case), gw)
    submit_human_turn(session, "Where does it hurt?", gw)
    assert session.turns[1].content == "Where does it hurt?"
    assert session.turns[2].content == "Answer to: Where does it hurt?"
    assert session.status == "awaiting_doctor"


def test_human_text_with_marker_diagnoses(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    session = open_session(_corpus(case), _session_config(case), gw)
    submit_human_turn(session, DIAGNOSIS_TEXT, gw)
    assert session.closed and session.terminated_by == "diagnosis"


def test_human_structured_diagnosis(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    session = open_session(_corpus(case), _session_config(case), gw)
    submit_human_diagnosis(session, ["A", "B", "C", "D", "E"], gw)
    traj = session.to_trajectory()
    assert traj.provenance == "human"
    assert traj.final_diagnoses.entries == ("A", "B", "C", "D", "E")
    assert validate_trajectory(traj) == []


def test_human_turn_guards(case):
    gw = make_gateway(role_router(scripted_doctor(0), echo_patient))
    session = open_session(_corpus(case), _session_config(case), gw)
    agent_session = open_session(
        _corpus(case), _session_config(case, doctor=DoctorProfile(endpoint=ENDPOINT)), gw
    )
    with pytest.raises(NotYourTurn):
        submit_human_turn(agent_session, "hi", gw)
    submit_human_diagnosis(session, ["A", "B", "C", "D", "E"], gw)
    with pytest.raises(SessionClosed):
        submit_human_turn(session, "too late", gw)


# -- campaigns -------------------------------------------------------------------

def _mock_world(tmp_path):
    from anamnesis.cli import bundled_notes_path
    from anamnesis.curation import CurationLlms, RawNote, curate_case, filter_notes
    from anamnesis.domain import read_jsonl

    gw = make_gateway(routing_transport)
    endpoint = EndpointProfile(base_url="mock://scripted", model_name="scripted")
    notes = filter_notes([RawNote.from_dict(d) for d in read_jsonl(bundled_notes_path())])
    llms = CurationLlms(curator=endpoint, judge=endpoint)
    cases = tuple(
        r.case for n in notes[:3] if (r := curate_case(n, llms, gw)).case is not None
    )
    return CaseCorpus(cases=cases), endpoint, gw


def test_campaign_deterministic_and_complete(tmp_path):
    corpus, endpoint, gw = _mock_world(tmp_path)
    campaign = Campaign(campaign_id="t", rollouts_per_case=3, seed=5, concurrency=4)
    doctor = DoctorProfile(endpoint=endpoint, prompt_style="pre_trained")
    run_a, manifest_a = run_campaign(campaign, corpus, doctor, endpoint, gw)
    run_b, manifest_b = run_campaign(campaign, corpus, doctor, endpoint, gw)
    assert [t.to_dict() for t in run_a] == [t.to_dict() for t in run_b]
    assert manifest_a["config_hash"] == manifest_b["config_hash"]
    assert len(run_a) == 9
    assert all(validate_trajectory(t) == [] for t in run_a)
    # question budget is a hard bound
    assert all(t.num_doctor_questions <= campaign.max_turns for t in run_a)


def test_campaign_survives_per_session_errors(case):
    calls = {"n": 0}

    def flaky_doctor(payload):
        return "Preliminary diagnoses:\n1. broken"

    gw = make_gateway(role_router(flaky_doctor, echo_patient))
    campaign = Campaign(campaign_id="t", rollouts_per_case=2, seed=1, concurrency=2)
    doctor = DoctorProfile(endpoint=ENDPOINT)
    trajectories, manifest = run_campaign(campaign, _corpus(case), doctor, ENDPOINT, gw)
    assert len(trajectories) == 2
    assert all(t.terminated_by == "error" for t in trajectories)
    assert manifest["terminated_by"] == {"error": 2}
