"""Session state machine for multi-turn interviews, self-play or
human-in-the-loop, plus batch rollout campaigns.

A session opens with the patient's chief-complaint statement, then doctor
and patient alternate one exchange at a time until the doctor diagnoses,
errors out, or hits the question cap. At the cap a single forced-diagnosis
call is issued so capped interviews still yield a ranked list; only when
even that fails to parse does the trajectory close as turn_cap. Human and
agent sessions produce structurally identical trajectories (a provenance
flag aside), so every downstream scorer accepts both.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from .agents import (
    DiagnosisParseError,
    DoctorProfile,
    PatientProfile,
    ProtocolError,
    ThinkParseError,
    build_vignette,
    contains_diagnosis_marker,
    doctor_step,
    opening_statement,
    parse_diagnoses,
    patient_step,
)
from .domain import (
    DEFAULT_K,
    DOCTOR,
    PATIENT,
    Ask,
    Diagnose,
    DiagnosisList,
    DialogueState,
    CaseCorpus,
    PatientCase,
    Trajectory,
    Turn,
)
from .gateway import EndpointProfile, Gateway, GatewayError

DEFAULT_MAX_TURNS = 40


class UnknownCase(Exception):
    pass


class SessionClosed(Exception):
    pass


class NotYourTurn(Exception):
    pass


@dataclass(frozen=True)
class SessionConfig:
    """``doctor`` None means a human plays the doctor via the API/UI."""

    case_id: str
    patient: PatientProfile
    doctor: DoctorProfile | None = None
    max_turns: int = DEFAULT_MAX_TURNS
    k: int = DEFAULT_K
    seed: int | None = None
    opening_statement: str | None = None

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("SessionConfig: max_turns must be >= 1")

    @property
    def human(self) -> bool:
        return self.doctor is None


class Session:
    """One live interview. Mutable while open; immutable once closed."""

    def __init__(self, session_id: str, config: SessionConfig, case: PatientCase):
        self.session_id = session_id
        self.config = config
        self.case = case
        self.turns: list[Turn] = []
        self.status = "open"
        self.questions_asked = 0
        self.terminated_by: str | None = None
        self.final_diagnoses: DiagnosisList | None = None
        self.error: str | None = None

    @property
    def closed(self) -> bool:
        return self.status == "closed"

    @property
    def awaiting(self) -> str:
        return "nobody" if self.closed else "doctor" if self.status == "awaiting_doctor" else "patient"

    def state(self) -> DialogueState:
        cc = self.turns[0].content if self.turns else self.case.chief_complaint
        history: list[tuple[str, str]] = []
        i = 1
        while i + 1 < len(self.turns):
            history.append((self.turns[i].content, self.turns[i + 1].content))
            i += 2
        return DialogueState(chief_complaint=cc, history=tuple(history))

    def append_turn(self, role: str, content: str, reasoning=None, sentinel=None) -> None:
        self.turns.append(
            Turn(index=len(self.turns), role=role, content=content, reasoning=reasoning, sentinel=sentinel)
        )

    def close(self, terminated_by: str, final: DiagnosisList | None = None, error: str | None = None) -> None:
        self.terminated_by = terminated_by
        self.final_diagnoses = final
        self.error = error
        self.status = "closed"

    def to_trajectory(self) -> Trajectory:
        if not self.closed:
            raise ValueError("session still open")
        return Trajectory(
            case_id=self.case.case_id,
            turns=tuple(self.turns),
            terminated_by=self.terminated_by or "error",
            num_doctor_questions=self.questions_asked,
            final_diagnoses=self.final_diagnoses,
            session_id=self.session_id,
            provenance="human" if self.config.human else "agent",
        )

    def view(self) -> dict[str, Any]:
        """Blinded snapshot for clients: visible utterances only, never the
        vignette, findings, or diagnosis."""
        return {
            "session_id": self.session_id,
            "case_id": self.case.case_id,
            "status": self.status,
            "awaiting": self.awaiting,
            "turns": [
                {"index": t.index, "role": t.role, "content": t.content} for t in self.turns
            ],
            "questions_asked": self.questions_asked,
            "max_turns": self.config.max_turns,
            "remaining_questions": max(0, self.config.max_turns - self.questions_asked),
            "k": self.config.k,
            "terminated_by": self.terminated_by,
            "error": self.error,
        }


def open_session(
    corpus: CaseCorpus,
    config: SessionConfig,
    gateway: Gateway,
    session_id: str | None = None,
) -> Session:
    """Open a session and place the patient's opening statement: either the
    configured verbatim opener (e.g. from a curated dialogue) or one
    generated by the patient agent from its vignette."""
    case = corpus.by_id(config.case_id)
    if case is None:
        raise UnknownCase(config.case_id)
    session = Session(session_id or uuid.uuid4().hex[:12], config, case)
    opener = config.opening_statement
    if not opener:
        opener = opening_statement(config.patient, gateway, seed=config.seed)
    session.append_turn(PATIENT, opener)
    session.status = "awaiting_doctor"
    return session


def _close_with_diagnosis(session: Session, visible: str, ranked: DiagnosisList, reasoning) -> None:
    session.append_turn(DOCTOR, visible, reasoning=reasoning)
    session.close("diagnosis", final=ranked)


def _forced_diagnosis(session: Session, gateway: Gateway) -> None:
    """Single cap-time call that asks for the ranked list outright."""
    assert session.config.doctor is not None
    forced = DoctorProfile(
        endpoint=session.config.doctor.endpoint,
        prompt_style="forced_diagnosis",
        reasoning_mode="none",
    )
    try:
        action, reasoning, visible = doctor_step(
            forced, session.state(), gateway, k=session.config.k, seed=session.config.seed
        )
    except (ProtocolError, DiagnosisParseError, ThinkParseError, GatewayError):
        session.close("turn_cap")
        return
    if isinstance(action, Diagnose):
        _close_with_diagnosis(session, visible, action.ranked, reasoning)
    else:
        session.close("turn_cap")


def advance(session: Session, gateway: Gateway) -> Session:
    """One full exchange for an agent doctor: doctor decides, patient
    answers when asked, the session closes on Diagnose / cap / error."""
    if session.closed:
        raise SessionClosed(session.session_id)
    if session.config.doctor is None:
        raise NotYourTurn("session has a human doctor; use submit_human_turn")

    if session.questions_asked >= session.config.max_turns:
        _forced_diagnosis(session, gateway)
        return session

    try:
        action, reasoning, visible = doctor_step(
            session.config.doctor, session.state(), gateway, k=session.config.k, seed=session.config.seed
        )
    except (ProtocolError, DiagnosisParseError, ThinkParseError, GatewayError) as exc:
        session.close("error", error=f"doctor_step: {type(exc).__name__}: {exc}")
        return session

    if isinstance(action, Diagnose):
        _close_with_diagnosis(session, visible, action.ranked, reasoning)
        return session

    assert isinstance(action, Ask)
    session.append_turn(DOCTOR, visible, reasoning=reasoning)
    session.questions_asked += 1
    session.status = "awaiting_patient"
    try:
        reply, sentinel = patient_step(
            session.config.patient, session.state(), action.question, gateway, seed=session.config.seed
        )
    except GatewayError as exc:
        session.close("error", error=f"patient_step: {type(exc).__name__}: {exc}")
        return session
    session.append_turn(PATIENT, reply, sentinel=sentinel)
    session.status = "awaiting_doctor"
    return session


def run_to_completion(session: Session, gateway: Gateway) -> Trajectory:
    while not session.closed:
        advance(session, gateway)
    return session.to_trajectory()


def submit_human_turn(session: Session, text: str, gateway: Gateway) -> Session:
    """A human doctor turn: treated exactly like an agent Ask, or like
    Diagnose when the text parses as a ranked list."""
    if session.closed:
        raise SessionClosed(session.session_id)
    if session.config.doctor is not None or session.status != "awaiting_doctor":
        raise NotYourTurn(session.session_id)

    if contains_diagnosis_marker(text):
        ranked = parse_diagnoses(text, k=session.config.k)
        _close_with_diagnosis(session, text.strip(), ranked, None)
        return session

    if session.questions_asked >= session.config.max_turns:
        raise NotYourTurn("question budget exhausted; submit a diagnosis")
    question = text.strip()
    if not question:
        raise ValueError("empty doctor turn")
    session.append_turn(DOCTOR, question)
    session.questions_asked += 1
    session.status = "awaiting_patient"
    reply, sentinel = patient_step(session.config.patient, session.state(), question, gateway, seed=session.config.seed)
    session.append_turn(PATIENT, reply, sentinel=sentinel)
    session.status = "awaiting_doctor"
    return session


def submit_human_diagnosis(session: Session, labels: Sequence[str], gateway: Gateway) -> Session:
    """Structured diagnosis submission (the UI's ranked form)."""
    if session.closed:
        raise SessionClosed(session.session_id)
    if session.config.doctor is not None or session.status != "awaiting_doctor":
        raise NotYourTurn(session.session_id)
    ranked = DiagnosisList(entries=tuple(str(l).strip() for l in labels)).require_k(session.config.k)
    _close_with_diagnosis(session, ranked.render(), ranked, None)
    return session


# -- campaigns ----------------------------------------------------------------

@dataclass(frozen=True)
class Campaign:
    """Batch of self-play sessions: rollouts_per_case per corpus case."""

    campaign_id: str
    rollouts_per_case: int = 3
    max_turns: int = DEFAULT_MAX_TURNS
    k: int = DEFAULT_K
    seed: int = 0
    concurrency: int = 4

    def __post_init__(self) -> None:
        if self.rollouts_per_case < 1:
            raise ValueError("Campaign: rollouts_per_case must be >= 1")

    def session_seed(self, rollout_index: int) -> int:
        # Shared across cases on purpose: each case's candidate pool then
        # spans the same spectrum of doctor behaviors under the scripted
        # model, while staying fully deterministic.
        return self.seed * 100 + rollout_index

    def to_dict(self) -> dict[str, Any]:
        return {
            "campaign_id": self.campaign_id,
            "rollouts_per_case": self.rollouts_per_case,
            "max_turns": self.max_turns,
            "k": self.k,
            "seed": self.seed,
            "concurrency": self.concurrency,
        }


def config_hash(payload: Any) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def run_campaign(
    campaign: Campaign,
    corpus: CaseCorpus,
    doctor: DoctorProfile,
    patient_endpoint: EndpointProfile,
    gateway: Gateway,
) -> tuple[list[Trajectory], dict[str, Any]]:
    """Run every (case, rollout) session, bounded-concurrent, never aborting
    the campaign on per-session errors. The returned order is deterministic
    (corpus order, then rollout index) so artifact files are reproducible."""
    jobs: list[tuple[int, int, PatientCase]] = []
    for ci, case in enumerate(corpus.cases):
        for ri in range(campaign.rollouts_per_case):
            jobs.append((ci, ri, case))

    results: dict[tuple[int, int], Trajectory] = {}
    lock = threading.Lock()

    def run_one(job: tuple[int, int, PatientCase]) -> None:
        ci, ri, case = job
        session_id = f"{case.case_id}-r{ri:02d}"
        config = SessionConfig(
            case_id=case.case_id,
            patient=PatientProfile(endpoint=patient_endpoint, vignette=build_vignette(case)),
            doctor=doctor,
            max_turns=campaign.max_turns,
            k=campaign.k,
            seed=campaign.session_seed(ri),
        )
        try:
            session = open_session(corpus, config, gateway, session_id=session_id)
            trajectory = run_to_completion(session, gateway)
        except Exception as exc:  # defensive: a session must never sink the batch
            trajectory = Trajectory(
                case_id=case.case_id,
                turns=(),
                terminated_by="error",
                num_doctor_questions=0,
                session_id=session_id,
            )
            with lock:
                errors.append({"session_id": session_id, "error": f"{type(exc).__name__}: {exc}"})
        with lock:
            results[(ci, ri)] = trajectory

    errors: list[dict[str, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, campaign.concurrency)) as pool:
        list(pool.map(run_one, jobs))

    ordered = [results[(ci, ri)] for ci, ri, _ in jobs]
    by_termination: dict[str, int] = {}
    for t in ordered:
        by_termination[t.terminated_by] = by_termination.get(t.terminated_by, 0) + 1
    manifest = {
        "campaign_id": campaign.campaign_id,
        "config_hash": config_hash(
            {
                "campaign": campaign.to_dict(),
                "doctor": {
                    "endpoint": doctor.endpoint.to_dict(),
                    "prompt_style": doctor.prompt_style,
                    "reasoning_mode": doctor.reasoning_mode,
                },
                "patient_endpoint": patient_endpoint.to_dict(),
                "cases": [c.case_id for c in corpus.cases],
            }
        ),
        "case_count": len(corpus.cases),
        "rollouts_per_case": campaign.rollouts_per_case,
        "seed": campaign.seed,
        "trajectories": len(ordered),
        "terminated_by": dict(sorted(by_termination.items())),
        "errors": errors,
    }
    return ordered, manifest
