"""Single point of contact with chat-completion endpoints.

Speaks the OpenAI-compatible ``/chat/completions`` HTTP shape, which every
model role here (doctor, patient, judge, curator) can sit behind. Adds
bounded retries with non-decreasing backoff, structured-output extraction
with a single repair re-prompt, an append-only JSONL audit trail, and a
per-endpoint in-flight cap so concurrent sessions cannot stampede a server.

Profiles whose ``base_url`` uses the ``mock://`` scheme are served by an
in-process scripted model (see ``mockmodel``), which keeps tests and demo
pipelines fully offline.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence
from urllib.parse import urlparse

import jsonschema

from . import schemas
from .domain import dumps_record


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Network failure or timeout that survived all retries."""


class EndpointError(GatewayError):
    """Non-success HTTP status; the response body is preserved."""

    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint returned status {status}")
        self.status = status
        self.body = body


class EmptyResponse(GatewayError):
    pass


class ParseError(GatewayError):
    """No JSON value could be extracted from the response text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class SchemaError(GatewayError):
    """Extracted JSON failed schema validation; raw text preserved."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class EndpointProfile:
    """Everything needed to talk to one model behind one URL.

    ``api_key_ref`` names an environment variable; the key itself is never
    stored in configs or logs.
    """

    base_url: str
    model_name: str
    api_key_ref: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_timeout_ms: int = 60_000
    max_retries: int = 2

    def validate(self) -> None:
        if self.temperature < 0:
            raise ValueError("EndpointProfile: temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("EndpointProfile: max_retries must be >= 0")
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https", "mock") or not parsed.netloc:
            raise ValueError(f"EndpointProfile: malformed base_url {self.base_url!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "api_key_ref": self.api_key_ref,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "request_timeout_ms": self.request_timeout_ms,
            "max_retries": self.max_retries,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EndpointProfile":
        return cls(
            base_url=str(d["base_url"]),
            model_name=str(d["model_name"]),
            api_key_ref=d.get("api_key_ref"),
            temperature=float(d.get("temperature", 0.0)),
            max_output_tokens=int(d.get("max_output_tokens", 1024)),
            request_timeout_ms=int(d.get("request_timeout_ms", 60_000)),
            max_retries=int(d.get("max_retries", 2)),
        )


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"ChatMessage: bad role {self.role!r}")
        if not self.content:
            raise ValueError("ChatMessage: content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class GatewayRecord:
    """Audit entry for one logical completion call (all attempts included)."""

    base_url: str
    model_name: str
    messages: tuple[dict[str, str], ...]
    response: str | None
    latency_ms: float
    attempts: int
    outcome: str  # "ok" | "error"
    error: str | None = None
    usage: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "messages": list(self.messages),
            "response": self.response,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
            "outcome": self.outcome,
            "error": self.error,
            "usage": self.usage,
        }


# A transport takes (profile, payload, timeout_s) and returns
# (status_code, body_text). Raising OSError/httpx errors means "transport
# failure" and is retried.
Transport = Callable[[EndpointProfile, dict[str, Any], float], tuple[int, str]]

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


def http_transport(profile: EndpointProfile, payload: dict[str, Any], timeout_s: float) -> tuple[int, str]:
    import httpx

    url = profile.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if profile.api_key_ref:
        key = os.environ.get(profile.api_key_ref, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout_s)
    except httpx.HTTPError as exc:
        raise OSError(str(exc)) from exc
    return resp.status_code, resp.text


def extract_first_json(text: str) -> Any:
    """Pull the first JSON value out of a model reply.

    Tries fenced code blocks first, then scans the raw text for the first
    decodable object or array, skipping any surrounding prose.
    """
    decoder = json.JSONDecoder()
    candidates: list[str] = [m.group(1) for m in _FENCE_RE.finditer(text)]
    candidates.append(text)
    for candidate in candidates:
        for match in re.finditer(r"[\[{]", candidate):
            try:
                value, _ = decoder.raw_decode(candidate, match.start())
                return value
            except json.JSONDecodeError:
                continue
    raise ParseError("no JSON value found in response", raw=text)


class Gateway:
    """Thread-safe client shared by every agent and judge.

    ``backoff_base_s`` controls the retry schedule ``base * 2**attempt``,
    which is monotonically non-decreasing as required. Tests inject a no-op
    ``sleeper``.
    """

    def __init__(
        self,
        transport: Transport | None = None,
        audit_log: Path | str | None = None,
        max_in_flight: int = 8,
        backoff_base_s: float = 0.5,
        backoff_cap_s: float = 8.0,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._transport = transport or http_transport
        self._audit_log = Path(audit_log) if audit_log else None
        self._max_in_flight = max(1, int(max_in_flight))
        self._backoff_base_s = backoff_base_s
        self._backoff_cap_s = backoff_cap_s
        self._sleeper = sleeper
        self._records: list[GatewayRecord] = []
        self._lock = threading.Lock()
        self._semaphores: dict[tuple[str, str], threading.BoundedSemaphore] = {}

    # -- bookkeeping -----------------------------------------------------

    @property
    def records(self) -> list[GatewayRecord]:
        with self._lock:
            return list(self._records)

    def _semaphore(self, profile: EndpointProfile) -> threading.BoundedSemaphore:
        key = (profile.base_url, profile.model_name)
        with self._lock:
            if key not in self._semaphores:
                self._semaphores[key] = threading.BoundedSemaphore(self._max_in_flight)
            return self._semaphores[key]

    def _record(self, record: GatewayRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self._audit_log is not None:
                self._audit_log.parent.mkdir(parents=True, exist_ok=True)
                with open(self._audit_log, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(dumps_record(record.to_dict()) + "\n")

    def backoff_s(self, attempt: int) -> float:
        return min(self._backoff_cap_s, self._backoff_base_s * (2**attempt))

    # -- calls -----------------------------------------------------------

    def complete(
        self,
        profile: EndpointProfile,
        messages: Sequence[ChatMessage],
        *,
        temperature: float | None = None,
        seed: int | None = None,
    ) -> str:
        """Return the assistant text for one completion call.

        Retries transport failures and retryable statuses up to
        ``profile.max_retries`` extra attempts; exactly one GatewayRecord is
        appended no matter how the call ends.
        """
        profile.validate()
        if not messages:
            raise ValueError("complete: messages must be non-empty")
        payload: dict[str, Any] = {
            "model": profile.model_name,
            "messages": [m.to_dict() for m in messages],
            "temperature": profile.temperature if temperature is None else temperature,
            "max_tokens": profile.max_output_tokens,
        }
        if seed is not None:
            payload["seed"] = int(seed)

        timeout_s = profile.request_timeout_ms / 1000.0
        started = time.monotonic()
        attempts = 0
        failure: GatewayError | None = None
        response_text: str | None = None
        usage: dict[str, Any] | None = None
        sem = self._semaphore(profile)
        try:
            for attempt in range(profile.max_retries + 1):
                attempts = attempt + 1
                if attempt > 0:
                    self._sleeper(self.backoff_s(attempt - 1))
                try:
                    with sem:
                        status, body = self._transport(profile, payload, timeout_s)
                except Exception as exc:
                    failure = TransportError(str(exc))
                    continue
                if status != 200:
                    failure = EndpointError(status, body)
                    if status in RETRYABLE_STATUSES:
                        continue
                    break
                try:
                    parsed = json.loads(body)
                    content = parsed["choices"][0]["message"]["content"]
                    usage = parsed.get("usage")
                except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                    failure = EndpointError(status, body)
                    failure.__cause__ = exc
                    break
                if content is None or not str(content).strip():
                    failure = EmptyResponse("endpoint returned an empty message")
                    break
                response_text = str(content)
                failure = None
                break
        finally:
            self._record(
                GatewayRecord(
                    base_url=profile.base_url,
                    model_name=profile.model_name,
                    messages=tuple(m.to_dict() for m in messages),
                    response=response_text,
                    latency_ms=(time.monotonic() - started) * 1000.0,
                    attempts=attempts,
                    outcome="ok" if response_text is not None else "error",
                    error=None if failure is None else f"{type(failure).__name__}: {failure}",
                    usage=usage,
                )
            )
        if failure is not None:
            raise failure
        assert response_text is not None
        return response_text

    def complete_json(
        self,
        profile: EndpointProfile,
        messages: Sequence[ChatMessage],
        schema_id: str,
        *,
        temperature: float | None = None,
        seed: int | None = None,
    ) -> Any:
        """Completion that must yield a value matching a registered schema.

        One automatic repair re-prompt (with the validation error appended)
        is attempted before ParseError/SchemaError surfaces; a returned
        value always validates.
        """
        schema = schemas.judge_schema(schema_id)
        attempt_messages = list(messages)
        last_error: GatewayError | None = None
        for _ in range(2):
            text = self.complete(profile, attempt_messages, temperature=temperature, seed=seed)
            try:
                value = extract_first_json(text)
            except ParseError as exc:
                last_error = exc
                attempt_messages = list(messages) + [
                    assistant(text),
                    user(
                        "Your previous reply contained no parseable JSON. "
                        "Respond again, strictly in the required JSON format and nothing else."
                    ),
                ]
                continue
            try:
                schemas.validate_against(schema, value)
            except jsonschema.ValidationError as exc:
                last_error = SchemaError(f"schema {schema_id!r}: {exc.message}", raw=text)
                attempt_messages = list(messages) + [
                    assistant(text),
                    user(
                        f"Your previous reply did not match the required format: {exc.message}. "
                        "Respond again, strictly in the required JSON format and nothing else."
                    ),
                ]
                continue
            return value
        assert last_error is not None
        raise last_error
