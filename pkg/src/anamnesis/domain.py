"""Domain model shared by every pipeline stage.

A patient case is a ground-truth diagnosis, an ordered set of findings
extracted from the note's HPI, and a chief complaint. A trajectory is one
full interview: a patient-opening, strictly alternating turn list that ends
either in a ranked differential or at a turn cap. All types here are
immutable after construction; pipelines build successor values instead of
mutating. The canonical on-disk encoding of each type is the JSON produced
by its ``to_dict``; corpora are stored one JSON object per line (JSONL,
UTF-8, LF).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

DOCTOR = "doctor"
PATIENT = "patient"
ROLES = frozenset({DOCTOR, PATIENT})

SPLITS = frozenset({"train", "test"})

TERMINATED_BY = frozenset({"diagnosis", "turn_cap", "error"})

DEFAULT_K = 5


class DomainError(ValueError):
    """A value violates a stated domain precondition or invariant."""


class SocratesCategory(str, Enum):
    """Symptom-attribute taxonomy used for category-level recall.

    Eight attribute categories plus History (past medical, medication,
    family, social context).
    """

    SITE = "Site"
    ONSET = "Onset"
    CHARACTER = "Character"
    RADIATION = "Radiation"
    ASSOCIATED_SYMPTOMS = "AssociatedSymptoms"
    TIMING = "Timing"
    EXACERBATING_RELIEVING = "ExacerbatingRelieving"
    SEVERITY = "Severity"
    HISTORY = "History"


@dataclass(frozen=True)
class Finding:
    """One clinical fact from the HPI, stated as a single sentence.

    ``finding_id`` equals the finding's position in its case's list.
    """

    finding_id: int
    text: str
    category: SocratesCategory | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"finding_id": self.finding_id, "text": self.text}
        if self.category is not None:
            d["category"] = self.category.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Finding":
        cat = d.get("category")
        return cls(
            finding_id=int(d["finding_id"]),
            text=str(d["text"]),
            category=SocratesCategory(cat) if cat is not None else None,
        )


@dataclass(frozen=True)
class PatientCase:
    """The unit of simulation: diagnosis, findings, and chief complaint."""

    case_id: str
    dx: str
    findings: tuple[Finding, ...]
    chief_complaint: str
    hpi: str = ""
    split: str = "train"

    @property
    def finding_ids(self) -> tuple[int, ...]:
        return tuple(f.finding_id for f in self.findings)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "dx": self.dx,
            "findings": [f.to_dict() for f in self.findings],
            "chief_complaint": self.chief_complaint,
            "hpi": self.hpi,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PatientCase":
        return cls(
            case_id=str(d["case_id"]),
            dx=str(d["dx"]),
            findings=tuple(Finding.from_dict(f) for f in d["findings"]),
            chief_complaint=str(d["chief_complaint"]),
            hpi=str(d.get("hpi", "")),
            split=str(d.get("split", "train")),
        )


@dataclass(frozen=True)
class ReasoningBlock:
    """Structured per-turn reasoning hidden from the patient.

    ``raw`` preserves the full text between the think delimiters so the
    original message can be reassembled byte-for-byte.
    """

    summary: str
    plan: str
    raw: str

    def to_dict(self) -> dict[str, Any]:
        return {"summary": self.summary, "plan": self.plan, "raw": self.raw}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReasoningBlock":
        return cls(summary=str(d["summary"]), plan=str(d["plan"]), raw=str(d["raw"]))


@dataclass(frozen=True)
class Turn:
    """One visible utterance. Reasoning may ride on doctor turns only.

    ``sentinel`` tags the two scripted patient replies ("I don't know." and
    "Sorry, you've already asked this question.") when detected.
    """

    index: int
    role: str
    content: str
    reasoning: ReasoningBlock | None = None
    sentinel: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"index": self.index, "role": self.role, "content": self.content}
        if self.reasoning is not None:
            d["reasoning"] = self.reasoning.to_dict()
        if self.sentinel is not None:
            d["sentinel"] = self.sentinel
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Turn":
        r = d.get("reasoning")
        return cls(
            index=int(d["index"]),
            role=str(d["role"]),
            content=str(d["content"]),
            reasoning=ReasoningBlock.from_dict(r) if r is not None else None,
            sentinel=d.get("sentinel"),
        )


@dataclass(frozen=True)
class DiagnosisList:
    """Ranked differential. Rank is the 1-based position: entries[0] has
    rank 1, so a top prediction scores the full rank credit."""

    entries: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise DomainError("DiagnosisList: entries must be non-empty")
        if any(not e.strip() for e in self.entries):
            raise DomainError("DiagnosisList: entries must be non-empty strings")

    @property
    def k(self) -> int:
        return len(self.entries)

    def require_k(self, k: int) -> "DiagnosisList":
        if len(self.entries) != k:
            raise DomainError(f"DiagnosisList: expected exactly {k} entries, got {len(self.entries)}")
        return self

    def render(self) -> str:
        """Canonical numbered-list rendering, parseable back to this list."""
        lines = ["Preliminary diagnoses:"]
        lines += [f"{i}. {label}" for i, label in enumerate(self.entries, start=1)]
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {"entries": list(self.entries)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DiagnosisList":
        return cls(entries=tuple(str(e) for e in d["entries"]))


@dataclass(frozen=True)
class Ask:
    """Follow-up question action."""

    question: str

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise DomainError("Ask: question must be non-empty")


@dataclass(frozen=True)
class Diagnose:
    """Terminal action carrying the ranked differential."""

    ranked: DiagnosisList


Action = Ask | Diagnose


@dataclass(frozen=True)
class Trajectory:
    """One full interview.

    Turns alternate starting from a patient opener; ``num_doctor_questions``
    counts doctor Ask turns only (the terminal diagnosis turn is not a
    question). ``final_diagnoses`` is present iff the trajectory terminated
    by diagnosis. ``provenance`` distinguishes human from agent doctors;
    scorers treat both identically.
    """

    case_id: str
    turns: tuple[Turn, ...]
    terminated_by: str
    num_doctor_questions: int
    final_diagnoses: DiagnosisList | None = None
    session_id: str = ""
    provenance: str = "agent"

    @property
    def total_turns(self) -> int:
        """Total conversational turns (patient + doctor messages)."""
        return len(self.turns)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "case_id": self.case_id,
            "session_id": self.session_id,
            "provenance": self.provenance,
            "turns": [t.to_dict() for t in self.turns],
            "terminated_by": self.terminated_by,
            "num_doctor_questions": self.num_doctor_questions,
            "total_turns": self.total_turns,
        }
        if self.final_diagnoses is not None:
            d["final_diagnoses"] = self.final_diagnoses.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Trajectory":
        fd = d.get("final_diagnoses")
        return cls(
            case_id=str(d["case_id"]),
            turns=tuple(Turn.from_dict(t) for t in d["turns"]),
            terminated_by=str(d["terminated_by"]),
            num_doctor_questions=int(d["num_doctor_questions"]),
            final_diagnoses=DiagnosisList.from_dict(fd) if fd is not None else None,
            session_id=str(d.get("session_id", "")),
            provenance=str(d.get("provenance", "agent")),
        )


@dataclass(frozen=True)
class DialogueState:
    """What the doctor can observe: the chief complaint plus the
    question/answer history. ``elicited`` is filled lazily by the reward
    module from the finding alignment; it must stay within the case's ids."""

    chief_complaint: str
    history: tuple[tuple[str, str], ...] = ()
    elicited: frozenset[int] = frozenset()

    def to_dict(self) -> dict[str, Any]:
        return {
            "chief_complaint": self.chief_complaint,
            "history": [list(pair) for pair in self.history],
            "elicited": sorted(self.elicited),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DialogueState":
        return cls(
            chief_complaint=str(d["chief_complaint"]),
            history=tuple((str(q), str(r)) for q, r in d.get("history", [])),
            elicited=frozenset(int(i) for i in d.get("elicited", [])),
        )


@dataclass(frozen=True)
class CaseCorpus:
    """A finite set of patient cases plus where they came from."""

    cases: tuple[PatientCase, ...]
    source_descriptor: str = ""

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for c in self.cases:
            counts[c.split] = counts.get(c.split, 0) + 1
        return counts

    def by_id(self, case_id: str) -> PatientCase | None:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        return None


def validate_case(case: PatientCase) -> list[str]:
    """Check every case invariant; violations are data, not failures.

    Returns an empty list iff the case is well formed. Each violation names
    the field and the rule it breaks.
    """
    violations: list[str] = []
    if not case.case_id.strip():
        violations.append("case_id: must be non-empty")
    if not case.dx.strip():
        violations.append("dx: must be non-empty")
    if not case.chief_complaint.strip():
        violations.append("chief_complaint: must be non-empty")
    if not case.findings:
        violations.append("findings: must be non-empty")
    else:
        if any(f.finding_id != i for i, f in enumerate(case.findings)):
            violations.append("findings: ids must equal positions")
        for f in case.findings:
            if not f.text.strip():
                violations.append(f"findings[{f.finding_id}].text: must be non-empty")
    if case.split not in SPLITS:
        violations.append("split: must be one of 'train', 'test'")
    return violations


def validate_corpus(corpus: CaseCorpus) -> list[str]:
    violations: list[str] = []
    seen: set[str] = set()
    for case in corpus.cases:
        if case.case_id in seen:
            violations.append(f"cases: duplicate case_id {case.case_id!r}")
        seen.add(case.case_id)
        violations.extend(f"{case.case_id}: {v}" for v in validate_case(case))
    return violations


def validate_trajectory(traj: Trajectory) -> list[str]:
    violations: list[str] = []
    if traj.terminated_by not in TERMINATED_BY:
        violations.append("terminated_by: must be one of diagnosis, turn_cap, error")
    for i, turn in enumerate(traj.turns):
        expected_role = PATIENT if i % 2 == 0 else DOCTOR
        if turn.index != i:
            violations.append(f"turns[{i}].index: must equal position")
        if turn.role != expected_role:
            violations.append(f"turns[{i}].role: must alternate patient-opening")
        if turn.role == PATIENT and turn.reasoning is not None:
            violations.append(f"turns[{i}]: patient turns have no reasoning")
        if not turn.content.strip():
            violations.append(f"turns[{i}].content: must be non-empty")
    has_final = traj.final_diagnoses is not None
    if has_final != (traj.terminated_by == "diagnosis"):
        violations.append("final_diagnoses: present iff terminated_by = diagnosis")
    doctor_turns = sum(1 for t in traj.turns if t.role == DOCTOR)
    expected_t = doctor_turns - (1 if traj.terminated_by == "diagnosis" else 0)
    if traj.num_doctor_questions != expected_t:
        violations.append("num_doctor_questions: must count doctor Ask turns only")
    if traj.terminated_by == "diagnosis" and traj.turns and traj.turns[-1].role != DOCTOR:
        violations.append("turns: diagnosis trajectories end on the doctor turn carrying the list")
    return violations


# -- JSONL persistence ---------------------------------------------------

def atomic_write_text(path: Path | str, text: str) -> None:
    """Write-then-rename so readers never observe a torn file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dumps_record(row: Mapping[str, Any]) -> str:
    return json.dumps(row, ensure_ascii=False)


def write_jsonl(path: Path | str, rows: Iterable[Mapping[str, Any]]) -> int:
    lines = [dumps_record(r) for r in rows]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def read_jsonl(path: Path | str) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_json(path: Path | str, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


def read_json(path: Path | str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_corpus(path: Path | str, source_descriptor: str = "") -> CaseCorpus:
    cases = tuple(PatientCase.from_dict(d) for d in read_jsonl(path))
    return CaseCorpus(cases=cases, source_descriptor=source_descriptor or str(path))


def save_corpus(path: Path | str, corpus: CaseCorpus) -> int:
    return write_jsonl(path, (c.to_dict() for c in corpus.cases))
