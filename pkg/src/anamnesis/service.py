"""HTTP API for live interview sessions (the clinician-facing flow) and
read access to cases and reports.

The interview stays blinded: case listings expose only the id and chief
complaint, session views only visible utterances, and the score route (the
only place findings and the true diagnosis appear) refuses to run before
the session closes. Sessions are journaled to the store as append-only
events and rebuilt by replay on startup, so a restart loses no closed
session. Per-session locks serialize turn submission; a 409 answers any
out-of-order or post-close submission.
"""

from __future__ import annotations

import threading
import uuid
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from .agents import DiagnosisParseError, PatientProfile, build_vignette
from .config import AppConfig
from .domain import CaseCorpus, load_corpus
from .evaluation import metrics_for_scored
from .gateway import Gateway, GatewayError
from .mockmodel import routing_transport
from .rewards import score_trajectory
from .rollout import (
    NotYourTurn,
    Session,
    SessionClosed,
    SessionConfig,
    open_session,
    submit_human_diagnosis,
    submit_human_turn,
)
from .store import Store


class CreateSessionRequest(BaseModel):
    case_id: str
    human: bool = True


class TurnRequest(BaseModel):
    text: str = Field(min_length=1)


class DiagnoseRequest(BaseModel):
    labels: list[str]


class SessionHost:
    """Owns live sessions, their locks, and the event journal."""

    def __init__(self, config: AppConfig, store: Store, corpus: CaseCorpus, gateway: Gateway):
        self.config = config
        self.store = store
        self.corpus = corpus
        self.gateway = gateway
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self._index_lock = threading.Lock()
        self.replay_all()

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._index_lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def patient_profile(self, case_id: str) -> PatientProfile:
        case = self.corpus.by_id(case_id)
        assert case is not None
        return PatientProfile(endpoint=self.config.endpoint("patient"), vignette=build_vignette(case))

    # -- journal -----------------------------------------------------------

    def journal(self, session: Session, event: dict[str, Any]) -> None:
        self.store.append_session_event(session.session_id, event)

    def open(self, case_id: str) -> Session:
        if self.corpus.by_id(case_id) is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        session_id = uuid.uuid4().hex[:12]
        config = SessionConfig(
            case_id=case_id,
            patient=self.patient_profile(case_id),
            doctor=None,
            max_turns=self.config.max_turns,
            k=self.config.k,
        )
        session = open_session(self.corpus, config, self.gateway, session_id=session_id)
        with self._index_lock:
            self.sessions[session_id] = session
        self.journal(
            session,
            {
                "type": "opened",
                "session_id": session_id,
                "case_id": case_id,
                "max_turns": config.max_turns,
                "k": config.k,
            },
        )
        self.record_turns(session, 0)
        return session

    def record_turns(self, session: Session, since: int) -> None:
        for turn in session.turns[since:]:
            self.journal(session, {"type": "turn", **turn.to_dict()})
        if session.closed:
            event: dict[str, Any] = {
                "type": "closed",
                "terminated_by": session.terminated_by,
                "error": session.error,
            }
            if session.final_diagnoses is not None:
                event["final_diagnoses"] = session.final_diagnoses.to_dict()
            self.journal(session, event)

    def replay_all(self) -> None:
        from .domain import DiagnosisList, Turn

        for session_id in self.store.list_session_ids():
            events = self.store.read_session_events(session_id)
            if not events or events[0].get("type") != "opened":
                continue
            head = events[0]
            case = self.corpus.by_id(str(head["case_id"]))
            if case is None:
                continue
            config = SessionConfig(
                case_id=case.case_id,
                patient=self.patient_profile(case.case_id),
                doctor=None,
                max_turns=int(head.get("max_turns", self.config.max_turns)),
                k=int(head.get("k", self.config.k)),
            )
            session = Session(session_id, config, case)
            for event in events:
                kind = event.get("type")
                if kind == "turn":
                    session.turns.append(Turn.from_dict(event))
                elif kind == "closed":
                    fd = event.get("final_diagnoses")
                    session.close(
                        str(event.get("terminated_by", "error")),
                        final=DiagnosisList.from_dict(fd) if fd else None,
                        error=event.get("error"),
                    )
            session.questions_asked = max(
                0,
                sum(1 for t in session.turns if t.role == "doctor")
                - (1 if session.terminated_by == "diagnosis" else 0),
            )
            if not session.closed:
                session.status = "awaiting_doctor"
            with self._index_lock:
                self.sessions[session_id] = session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session


def score_payload(host: SessionHost, session: Session) -> dict[str, Any]:
    """Rewards + metrics for a closed session; identical math to the
    library path (score_trajectory with recall_max = 1)."""
    cached = host.store.load_session_score(session.session_id)
    if cached is not None:
        return cached
    case = host.corpus.by_id(session.case.case_id)
    assert case is not None
    trajectory = session.to_trajectory()
    scored = score_trajectory(
        case,
        trajectory,
        host.config.endpoint("judge"),
        host.gateway,
        alpha=host.config.alpha,
        k=host.config.k,
    )
    metrics = metrics_for_scored(scored, k=host.config.k)
    payload = {
        "session_id": session.session_id,
        "case_id": case.case_id,
        "breakdown": scored.breakdown.to_dict(),
        "alignment": scored.alignment.to_dict(),
        "turn_rewards": [tr.to_dict() for tr in scored.turn_rewards],
        "metrics": metrics.to_dict(),
        "dx": case.dx,
        "final_diagnoses": trajectory.final_diagnoses.to_dict() if trajectory.final_diagnoses else None,
        "findings": [
            {
                "finding_id": f.finding_id,
                "text": f.text,
                "aligned_turn": scored.alignment.aligned_turn[f.finding_id],
                "elicited": scored.alignment.aligned_turn[f.finding_id] >= 0,
            }
            for f in case.findings
        ],
    }
    host.store.save_session_score(session.session_id, payload)
    return payload


def create_app(
    config: AppConfig,
    corpus: CaseCorpus | None = None,
    gateway: Gateway | None = None,
    store: Store | None = None,
) -> FastAPI:
    store = store or Store(config.data_root)
    if corpus is None:
        if not store.cases_path.exists():
            raise FileNotFoundError(
                f"no case corpus at {store.cases_path}; run `anamnesis curate` first"
            )
        corpus = load_corpus(store.cases_path)
    gateway = gateway or Gateway(
        transport=routing_transport,
        audit_log=store.audit_log_path,
        max_in_flight=config.concurrency,
    )
    host = SessionHost(config, store, corpus, gateway)
    app = FastAPI(title="anamnesis interview service")
    app.state.host = host

    def check_token(request: Request) -> None:
        if config.api_token is None:
            return
        supplied = request.headers.get("Authorization", "")
        if supplied != f"Bearer {config.api_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    guarded = [Depends(check_token)]

    @app.get("/cases", dependencies=guarded)
    def list_cases() -> list[dict[str, str]]:
        # Blinded listing: id and chief complaint only.
        return [
            {"case_id": c.case_id, "chief_complaint": c.chief_complaint}
            for c in host.corpus.cases
        ]

    @app.post("/sessions", status_code=201, dependencies=guarded)
    def create_session(body: CreateSessionRequest) -> dict[str, Any]:
        if not body.human:
            raise HTTPException(
                status_code=422,
                detail="agent sessions are batch-only; run `anamnesis rollout`",
            )
        session = host.open(body.case_id)
        return session.view()

    @app.get("/sessions/{session_id}", dependencies=guarded)
    def get_session(session_id: str) -> dict[str, Any]:
        return host.get(session_id).view()

    @app.post("/sessions/{session_id}/turns", dependencies=guarded)
    def post_turn(session_id: str, body: TurnRequest) -> dict[str, Any]:
        session = host.get(session_id)
        with host.lock_for(session_id):
            before = len(session.turns)
            try:
                submit_human_turn(session, body.text, host.gateway)
            except (SessionClosed, NotYourTurn) as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except DiagnosisParseError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            except GatewayError as exc:
                raise HTTPException(status_code=502, detail=str(exc)) from exc
            host.record_turns(session, before)
        return session.view()

    @app.post("/sessions/{session_id}/diagnose", dependencies=guarded)
    def post_diagnosis(session_id: str, body: DiagnoseRequest) -> dict[str, Any]:
        session = host.get(session_id)
        with host.lock_for(session_id):
            before = len(session.turns)
            try:
                submit_human_diagnosis(session, body.labels, host.gateway)
            except (SessionClosed, NotYourTurn) as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            host.record_turns(session, before)
        return session.view()

    @app.get("/sessions/{session_id}/score", dependencies=guarded)
    def get_score(session_id: str) -> dict[str, Any]:
        session = host.get(session_id)
        if not session.closed:
            raise HTTPException(status_code=409, detail="session is still open")
        try:
            return score_payload(host, session)
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=f"judge unavailable: {exc}") from exc

    @app.get("/reports/{run_id}", dependencies=guarded)
    def get_report(run_id: str) -> Any:
        path = store.report_path(run_id)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no report named {run_id!r}")
        return store.read_json(path)

    return app
