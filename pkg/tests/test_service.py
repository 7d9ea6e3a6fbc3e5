from __future__ import annotations

import json
from dataclasses import replace

import pytest
from fastapi.testclient import TestClient

from anamnesis.config import default_config
from anamnesis.domain import CaseCorpus, save_corpus
from anamnesis.service import create_app
from anamnesis.store import Store

from conftest import make_case

FIVE = ["Pneumonia", "Flu", "Bronchitis", "Asthma", "A cold"]


@pytest.fixture
def world(tmp_path):
    config = replace(default_config(), data_root=tmp_path)
    corpus = CaseCorpus(cases=(make_case(), make_case(case_id="case-2", dx="Asthma")))
    save_corpus(Store(tmp_path).cases_path, corpus)
    app = create_app(config)
    return config, TestClient(app), tmp_path


def test_create_session_contract(world):
    _, client, _ = world
    r = client.post("/sessions", json={"case_id": "case-1", "human": True})
    assert r.status_code == 201
    body = r.json()
    assert body["status"] == "awaiting_doctor"
    assert body["turns"][0]["role"] == "patient" and body["turns"][0]["content"]
    assert body["remaining_questions"] == body["max_turns"]


def test_unknown_case_404(world):
    _, client, _ = world
    assert client.post("/sessions", json={"case_id": "nope"}).status_code == 404
    assert client.get("/sessions/nope").status_code == 404


def test_cases_listing_is_blinded(world):
    _, client, _ = world
    cases = client.get("/cases").json()
    assert all(set(c.keys()) == {"case_id", "chief_complaint"} for c in cases)


def test_session_view_never_leaks_case_content(world):
    _, client, _ = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    view = client.get(f"/sessions/{sid}").json()
    text = json.dumps(view)
    assert "Pneumonia" not in text  # the diagnosis
    assert "vignette" not in text.lower()


def test_turn_flow_and_close_guard(world):
    _, client, _ = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    r = client.post(f"/sessions/{sid}/turns", json={"text": "When did the cough start?"})
    assert r.status_code == 200
    assert r.json()["turns"][-1]["role"] == "patient"
    r = client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE})
    assert r.status_code == 200 and r.json()["status"] == "closed"
    # 409 on anything after close
    assert client.post(f"/sessions/{sid}/turns", json={"text": "more?"}).status_code == 409
    assert client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE}).status_code == 409


def test_wrong_label_count_422(world):
    _, client, _ = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    r = client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE[:4]})
    assert r.status_code == 422


def test_score_requires_closed_session(world):
    _, client, _ = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    assert client.get(f"/sessions/{sid}/score").status_code == 409
    client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE})
    payload = client.get(f"/sessions/{sid}/score").json()
    assert payload["breakdown"]["rank"] == 1  # top label matches the dx
    assert {f["finding_id"] for f in payload["findings"]} == {0, 1, 2, 3}
    assert payload["dx"] == "Pneumonia"


def test_score_matches_library_field_for_field(world):
    config, client, tmp_path = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    client.post(f"/sessions/{sid}/turns", json={"text": "Tell me about the cough?"})
    client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE})
    api_payload = client.get(f"/sessions/{sid}/score").json()

    from anamnesis.domain import Trajectory, load_corpus
    from anamnesis.gateway import Gateway
    from anamnesis.mockmodel import routing_transport
    from anamnesis.rewards import score_trajectory

    host = client.app.state.host
    session = host.sessions[sid]
    corpus = load_corpus(Store(tmp_path).cases_path)
    scored = score_trajectory(
        corpus.by_id("case-1"),
        session.to_trajectory(),
        config.endpoint("judge"),
        Gateway(transport=routing_transport),
        alpha=config.alpha,
        k=config.k,
    )
    assert api_payload["breakdown"] == json.loads(json.dumps(scored.breakdown.to_dict()))
    assert api_payload["alignment"] == scored.alignment.to_dict()
    assert api_payload["turn_rewards"] == [tr.to_dict() for tr in scored.turn_rewards]


def test_agent_sessions_rejected_over_http(world):
    _, client, _ = world
    r = client.post("/sessions", json={"case_id": "case-1", "human": False})
    assert r.status_code == 422


def test_restart_replays_closed_sessions(world):
    config, client, tmp_path = world
    sid = client.post("/sessions", json={"case_id": "case-1"}).json()["session_id"]
    client.post(f"/sessions/{sid}/turns", json={"text": "One question?"})
    client.post(f"/sessions/{sid}/diagnose", json={"labels": FIVE})
    before = client.get(f"/sessions/{sid}").json()

    reborn = TestClient(create_app(config))
    after = reborn.get(f"/sessions/{sid}").json()
    assert after == before
    assert reborn.get(f"/sessions/{sid}/score").status_code == 200


def test_reports_endpoint(world):
    config, client, tmp_path = world
    store = Store(tmp_path)
    store.write_json(store.report_path("run-x"), {"f1": 0.5})
    assert client.get("/reports/run-x").json() == {"f1": 0.5}
    assert client.get("/reports/missing").status_code == 404


def test_bearer_token_enforced(tmp_path):
    config = replace(default_config(), data_root=tmp_path, api_token="sekrit")
    corpus = CaseCorpus(cases=(make_case(),))
    save_corpus(Store(tmp_path).cases_path, corpus)
    client = TestClient(create_app(config))
    assert client.get("/cases").status_code == 401
    ok = client.get("/cases", headers={"Authorization": "Bearer sekrit"})
    assert ok.status_code == 200
