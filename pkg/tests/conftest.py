from __future__ import annotations

import json

import pytest

from anamnesis.domain import Finding, PatientCase
from anamnesis.gateway import EndpointProfile, Gateway
from anamnesis.mockmodel import routing_transport


def ok_body(text: str) -> str:
    return json.dumps({"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 1}})


class ScriptedTransport:
    """Replays a fixed list of (status, body) or raises-on-call markers."""

    def __init__(self, steps):
        self.steps = list(steps)
        self.calls = 0
        self.payloads = []

    def __call__(self, profile, payload, timeout_s):
        self.calls += 1
        self.payloads.append(payload)
        if not self.steps:
            raise AssertionError("scripted transport exhausted")
        step = self.steps.pop(0)
        if step == "timeout":
            raise OSError("simulated timeout")
        return step


def replying(text: str) -> ScriptedTransport:
    return ScriptedTransport([(200, ok_body(text))])


def make_gateway(transport, **kwargs) -> Gateway:
    kwargs.setdefault("sleeper", lambda s: None)
    kwargs.setdefault("backoff_base_s", 0.01)
    return Gateway(transport=transport, **kwargs)


@pytest.fixture
def mock_gateway() -> Gateway:
    return make_gateway(routing_transport)


@pytest.fixture
def mock_endpoint() -> EndpointProfile:
    return EndpointProfile(base_url="mock://scripted", model_name="scripted", temperature=0.0)


def make_case(
    case_id: str = "case-1",
    dx: str = "Pneumonia",
    finding_texts=(
        "The cough began three days ago and has worsened.",
        "Thick yellow phlegm comes up each morning.",
        "Fevers at home reached 38.9 degrees with chills.",
        "Climbing stairs now causes shortness of breath.",
    ),
    chief_complaint: str = "I have had a bad cough and fever for three days.",
) -> PatientCase:
    return PatientCase(
        case_id=case_id,
        dx=dx,
        findings=tuple(Finding(finding_id=i, text=t) for i, t in enumerate(finding_texts)),
        chief_complaint=chief_complaint,
        hpi=" ".join(finding_texts),
    )


@pytest.fixture
def case() -> PatientCase:
    return make_case()
