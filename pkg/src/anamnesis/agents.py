"""Doctor and patient behaviors over the gateway, plus the strict parsers
for the per-turn reasoning protocol and ranked diagnosis lists.

Agent wrappers keep no state between calls; everything the doctor may see
lives in DialogueState. The patient endpoint only ever receives visible
utterances: reasoning blocks are parsed out of the doctor's raw reply
before the question is forwarded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import prompts
from .domain import (
    DEFAULT_K,
    Action,
    Ask,
    Diagnose,
    DiagnosisList,
    DialogueState,
    Finding,
    PatientCase,
    ReasoningBlock,
    SocratesCategory,
)
from .gateway import ChatMessage, EndpointProfile, Gateway, assistant, system, user

PROMPT_STYLES = ("fine_tuned", "pre_trained", "forced_diagnosis")
REASONING_MODES = ("none", "single_turn")

_STYLE_TEMPLATES = {
    "fine_tuned": "doctor_fine_tuned",
    "pre_trained": "doctor_pre_trained",
    "forced_diagnosis": "doctor_forced_diagnosis",
}


class ProtocolError(Exception):
    """Doctor reply carried neither a question nor a recognizable
    diagnosis marker."""


class ThinkParseError(Exception):
    pass


class DiagnosisParseError(Exception):
    pass


class MarkerNotFound(DiagnosisParseError):
    pass


class WrongCount(DiagnosisParseError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"expected {expected} diagnoses, found {found}")
        self.found = found
        self.expected = expected


@dataclass(frozen=True)
class DoctorProfile:
    endpoint: EndpointProfile
    prompt_style: str = "pre_trained"
    reasoning_mode: str = "none"

    def __post_init__(self) -> None:
        if self.prompt_style not in PROMPT_STYLES:
            raise ValueError(f"DoctorProfile: bad prompt_style {self.prompt_style!r}")
        if self.reasoning_mode not in REASONING_MODES:
            raise ValueError(f"DoctorProfile: bad reasoning_mode {self.reasoning_mode!r}")

    @property
    def system_prompt(self) -> str:
        return prompts.load_template(_STYLE_TEMPLATES[self.prompt_style])


@dataclass(frozen=True)
class PatientProfile:
    endpoint: EndpointProfile
    vignette: str

    @property
    def system_prompt(self) -> str:
        return prompts.render("patient_vignette", case_desc=self.vignette)


def build_vignette(case: PatientCase) -> str:
    """Case description handed to the patient agent: chief complaint plus
    the finding sentences. The diagnosis label never appears here."""
    parts = [case.chief_complaint.rstrip(".") + "."]
    parts.extend(f.text for f in case.findings)
    return " ".join(parts)


# -- reasoning-block parsing ----------------------------------------------

_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"
_SUMMARY_RE = re.compile(r"\*{0,2}Summary\*{0,2}\s*:", re.IGNORECASE)
_PLAN_RE = re.compile(r"\*{0,2}Plan\*{0,2}\s*:", re.IGNORECASE)


def parse_reasoning(raw: str, strict: bool = True) -> tuple[ReasoningBlock | None, str]:
    """Split a doctor reply into its reasoning block and visible text.

    The first ``<think>...</think>`` span is extracted; inside it the
    Summary: and Plan: sections are split on their labels. Visible text is
    everything after the closing tag, trimmed. Strict mode raises
    ThinkParseError on a missing tag, a missing/empty section, or empty
    visible text; lenient mode returns (None, full text) instead.
    """

    def fail(reason: str) -> tuple[ReasoningBlock | None, str]:
        if strict:
            raise ThinkParseError(reason)
        return None, raw

    open_at = raw.find(_THINK_OPEN)
    if open_at < 0:
        return fail("missing <think> tag")
    close_at = raw.find(_THINK_CLOSE, open_at + len(_THINK_OPEN))
    if close_at < 0:
        return fail("missing </think> tag")
    inner = raw[open_at + len(_THINK_OPEN) : close_at]
    visible = raw[close_at + len(_THINK_CLOSE) :].strip()
    if not visible:
        return fail("empty visible text after </think>")

    summary_m = _SUMMARY_RE.search(inner)
    plan_m = _PLAN_RE.search(inner)
    if summary_m is None or plan_m is None or plan_m.start() < summary_m.end():
        return fail("think block must contain Summary: then Plan:")
    summary = inner[summary_m.end() : plan_m.start()].strip()
    plan = inner[plan_m.end() :].strip()
    if not summary or not plan:
        return fail("Summary and Plan sections must be non-empty")
    return ReasoningBlock(summary=summary, plan=plan, raw=inner), visible


def render_reasoning(block: ReasoningBlock, visible: str) -> str:
    return f"{_THINK_OPEN}{block.raw}{_THINK_CLOSE}{visible}"


# -- diagnosis-list parsing -----------------------------------------------

# Tolerates case and markdown bold around the marker; the colon may sit
# inside or outside the bold span.
_MARKER_RE = re.compile(r"\*{0,2}preliminary\s+diagnoses\s*\*{0,2}:\*{0,2}", re.IGNORECASE)
_ITEM_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*|[-*•]\s+)(.+?)\s*$")


def contains_diagnosis_marker(text: str) -> bool:
    return _MARKER_RE.search(text) is not None


def parse_diagnoses(raw: str, k: int = DEFAULT_K) -> DiagnosisList:
    """Parse the ranked list that follows the "preliminary diagnoses:"
    marker. Exactly ``k`` numbered or bulleted labels must follow."""
    m = _MARKER_RE.search(raw)
    if m is None:
        raise MarkerNotFound("no 'preliminary diagnoses:' marker in response")
    labels: list[str] = []
    started = False
    for line in raw[m.end() :].splitlines():
        item = _ITEM_RE.match(line)
        if item:
            started = True
            label = item.group(1).strip().strip("*").strip()
            if label:
                labels.append(label)
        elif started and line.strip():
            break
    if len(labels) != k:
        raise WrongCount(found=len(labels), expected=k)
    return DiagnosisList(entries=tuple(labels))


# -- chat assembly ----------------------------------------------------------

def doctor_messages(profile: DoctorProfile, state: DialogueState) -> list[ChatMessage]:
    """Doctor-side view: patient utterances arrive as user messages, the
    doctor's own prior questions as assistant messages."""
    msgs = [system(profile.system_prompt), user(state.chief_complaint)]
    for q, r in state.history:
        msgs.append(assistant(q))
        msgs.append(user(r))
    return msgs


def patient_messages(profile: PatientProfile, state: DialogueState, question: str) -> list[ChatMessage]:
    """Patient-side view: only visible doctor text ever appears here."""
    msgs = [system(profile.system_prompt)]
    if state.chief_complaint:
        msgs.append(assistant(state.chief_complaint))
    for q, r in state.history:
        msgs.append(user(q))
        msgs.append(assistant(r))
    msgs.append(user(question))
    return msgs


# -- agent steps -------------------------------------------------------------

def doctor_step(
    profile: DoctorProfile,
    state: DialogueState,
    gateway: Gateway,
    k: int = DEFAULT_K,
    seed: int | None = None,
) -> tuple[Action, ReasoningBlock | None, str]:
    """One doctor decision. Returns (action, reasoning, visible_text).

    In single_turn mode the raw reply must carry a think block, which is
    stripped before anything reaches the patient. A forced_diagnosis
    profile only ever diagnoses.
    """
    raw = gateway.complete(profile.endpoint, doctor_messages(profile, state), seed=seed)
    if profile.reasoning_mode == "single_turn":
        block, visible = parse_reasoning(raw, strict=True)
    else:
        block, visible = None, raw.strip()

    if contains_diagnosis_marker(visible):
        ranked = parse_diagnoses(visible, k=k)
        return Diagnose(ranked=ranked), block, visible
    if profile.prompt_style == "forced_diagnosis":
        raise MarkerNotFound("forced-diagnosis reply carried no diagnosis marker")
    if not visible.strip():
        raise ProtocolError("doctor reply had neither a question nor a diagnosis marker")
    return Ask(question=visible.strip()), block, visible


def patient_step(
    profile: PatientProfile,
    state: DialogueState,
    question: str,
    gateway: Gateway,
    seed: int | None = None,
) -> tuple[str, str | None]:
    """Forward one doctor question; returns (reply, sentinel_tag)."""
    reply = gateway.complete(profile.endpoint, patient_messages(profile, state, question), seed=seed).strip()
    sentinel = None
    if reply == prompts.SENTINEL_DONT_KNOW:
        sentinel = "dont_know"
    elif reply == prompts.SENTINEL_REPEATED:
        sentinel = "repeated_question"
    return reply, sentinel


def opening_statement(profile: PatientProfile, gateway: Gateway, seed: int | None = None) -> str:
    """Elicit the chief-complaint opener from the patient agent. The
    eliciting question is protocol scaffolding and is not recorded."""
    reply, _ = patient_step(profile, DialogueState(chief_complaint=""), "What brings you in today?", gateway, seed=seed)
    return reply


def classify_finding_category(finding: Finding, judge: EndpointProfile, gateway: Gateway) -> SocratesCategory:
    """Single-label forced choice over the nine categories, temperature 0."""
    prompt = prompts.render("socrates_classification", finding=finding.text)
    value = gateway.complete_json(judge, [user(prompt)], "socrates_category", temperature=0.0)
    return SocratesCategory(value["category"])
