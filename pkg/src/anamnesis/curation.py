"""Note-to-dialogue curation: filtering, finding extraction, decision-tree
generation, dialogue generation, missing-fact detection, and the
critic/revision loop.

Notes are kept only when they carry an HPI of at least 100 words (whitespace
tokens) and a primary diagnosis. Findings are sentence-level facts selected
from the HPI by a judge call; downstream content (labs, treatments, plans)
is excluded because the patient could not report it during an interview.
Each kept case is turned into a dialogue guided by a generated decision
tree, then revised until every documented finding is covered or the round
budget runs out. A revision round is accepted only if it does not lose
coverage.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from . import prompts
from .domain import DOCTOR, PATIENT, Finding, PatientCase, Turn
from .gateway import EndpointProfile, Gateway, GatewayError, user
from .rewards import align_findings

MIN_HPI_WORDS = 100
MAX_REVISION_ROUNDS = 3

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


class CurationError(Exception):
    pass


class EmptyExtraction(CurationError):
    """The judge selected zero HPI sentences as findings."""


class MissingFinalDiagnosis(CurationError):
    """No decision-tree terminal carries is_final = true."""


class StructureError(CurationError):
    """Conversation roles do not strictly alternate patient-first."""


class LocationOutOfRange(CurationError):
    pass


def word_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RawNote:
    note_id: str
    chief_complaint: str
    hpi: str
    diagnosis: str

    @property
    def word_count(self) -> int:
        return word_count(self.hpi)

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "chief_complaint": self.chief_complaint,
            "hpi": self.hpi,
            "diagnosis": self.diagnosis,
            "word_count": self.word_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RawNote":
        return cls(
            note_id=str(d["note_id"]),
            chief_complaint=str(d.get("chief_complaint", "")),
            hpi=str(d.get("hpi", "")),
            diagnosis=str(d.get("diagnosis", "")),
        )


@dataclass(frozen=True)
class TerminalDiagnosis:
    condition: str
    confidence: str  # high | moderate | low
    is_final: bool

    def to_dict(self) -> dict[str, Any]:
        return {"condition": self.condition, "confidence": self.confidence, "is_final": self.is_final}


@dataclass(frozen=True)
class TreeNode:
    criteria: str = ""
    yes: "TreeNode | None" = None
    no: "TreeNode | None" = None
    diagnoses: tuple[TerminalDiagnosis, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {}
        if self.criteria:
            d["criteria"] = self.criteria
        branches: dict[str, Any] = {}
        if self.yes is not None:
            branches["yes"] = self.yes.to_dict()
        if self.no is not None:
            branches["no"] = self.no.to_dict()
        if branches:
            d["branches"] = branches
        if self.diagnoses:
            d["diagnoses"] = [t.to_dict() for t in self.diagnoses]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TreeNode":
        branches = d.get("branches") or {}
        return cls(
            criteria=str(d.get("criteria", "")),
            yes=cls.from_dict(branches["yes"]) if "yes" in branches else None,
            no=cls.from_dict(branches["no"]) if "no" in branches else None,
            diagnoses=tuple(
                TerminalDiagnosis(
                    condition=str(t["condition"]),
                    confidence=str(t["confidence"]),
                    is_final=bool(t["is_final"]),
                )
                for t in d.get("diagnoses") or ()
            ),
        )


@dataclass(frozen=True)
class DecisionTree:
    root: TreeNode

    def terminals(self) -> list[TerminalDiagnosis]:
        out: list[TerminalDiagnosis] = []

        def walk(node: TreeNode) -> None:
            out.extend(node.diagnoses)
            if node.yes is not None:
                walk(node.yes)
            if node.no is not None:
                walk(node.no)

        walk(self.root)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"tree": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DecisionTree":
        return cls(root=TreeNode.from_dict(d["tree"]))


@dataclass(frozen=True)
class GeneratedDialogue:
    """Alternating patient-first conversation ending on the doctor turn
    that states the preliminary differential."""

    conversation: tuple[Turn, ...]
    preliminary_diagnosis: tuple[tuple[str, str], ...]  # (disease, reason)

    def to_dict(self) -> dict[str, Any]:
        return {
            "conversation": [
                {"role": t.role, "content": t.content} for t in self.conversation
            ],
            "preliminary_diagnosis": [
                {"disease": d, "reason": r} for d, r in self.preliminary_diagnosis
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GeneratedDialogue":
        turns = tuple(
            Turn(index=i, role=str(m["role"]), content=str(m["content"]))
            for i, m in enumerate(d["conversation"])
        )
        return cls(
            conversation=turns,
            preliminary_diagnosis=tuple(
                (str(p["disease"]), str(p.get("reason", ""))) for p in d["preliminary_diagnosis"]
            ),
        )


@dataclass(frozen=True)
class RevisionAction:
    action: str  # "add_turn" | "revise_turn"
    location: int
    doctor: str = ""
    patient: str = ""
    comment: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RevisionAction":
        return cls(
            action=str(d["action"]),
            location=int(d["location"]),
            doctor=str(d.get("doctor", "")),
            patient=str(d.get("patient", "")),
            comment=str(d.get("comment", "")),
        )


def check_alternation(turns: Sequence[Turn]) -> None:
    if not turns:
        raise StructureError("conversation is empty")
    for i, turn in enumerate(turns):
        expected = PATIENT if i % 2 == 0 else DOCTOR
        if turn.role != expected:
            raise StructureError(f"turn {i}: expected {expected}, got {turn.role}")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text.strip()) if s.strip()]


# -- pipeline operations ------------------------------------------------------

def filter_notes(notes: Sequence[RawNote]) -> list[RawNote]:
    """Keep notes with a non-empty HPI of >= 100 words and a non-empty
    primary diagnosis. Pure: same input list, same output list."""
    return [
        n
        for n in notes
        if n.hpi.strip() and n.diagnosis.strip() and n.word_count >= MIN_HPI_WORDS
    ]


def extract_findings(note: RawNote, judge: EndpointProfile, gateway: Gateway) -> list[Finding]:
    """Sentence-level finding selection from the HPI.

    The HPI is split on sentence boundaries first; the judge picks the
    sentences a patient could report during history taking. Raises
    EmptyExtraction when nothing survives (e.g. an HPI of pure lab values).
    """
    sentences = split_sentences(note.hpi)
    if not sentences:
        raise EmptyExtraction(f"note {note.note_id}: HPI has no sentences")
    numbered = "\n".join(f"{i}. {s}" for i, s in enumerate(sentences))
    prompt = prompts.render("finding_extraction", sentences=numbered)
    value = gateway.complete_json(judge, [user(prompt)], "finding_selection", temperature=0.0)
    selected = sorted({i for i in value["selected"] if 0 <= i < len(sentences)})
    if not selected:
        raise EmptyExtraction(f"note {note.note_id}: judge selected no finding sentences")
    return [Finding(finding_id=fid, text=sentences[idx]) for fid, idx in enumerate(selected)]


def build_decision_tree(case: PatientCase, llm: EndpointProfile, gateway: Gateway) -> DecisionTree:
    """Generate and validate the differential-diagnosis tree for a case.

    The case diagnosis must appear as an is_final terminal; trees without
    one are rejected (MissingFinalDiagnosis)."""
    prompt = prompts.render(
        "decision_tree_generation",
        chief_complaint=case.chief_complaint,
        hpi=case.hpi,
        diagnosis=case.dx,
    )
    value = gateway.complete_json(llm, [user(prompt)], "decision_tree", temperature=0.0)
    tree = DecisionTree.from_dict(value)
    if not any(t.is_final for t in tree.terminals()):
        raise MissingFinalDiagnosis(f"case {case.case_id}: no terminal has is_final = true")
    return tree


def generate_dialogue(
    case: PatientCase, tree: DecisionTree, llm: EndpointProfile, gateway: Gateway
) -> GeneratedDialogue:
    """Decision-tree-guided dialogue generation.

    The conversation must alternate starting from the patient and end on
    the doctor turn carrying the five preliminary diagnoses."""
    prompt = prompts.render(
        "dialogue_generation",
        decision_tree=json.dumps(tree.root.to_dict(), ensure_ascii=False),
        chief_complaint=case.chief_complaint,
        hpi=case.hpi,
        diagnosis=case.dx,
    )
    value = gateway.complete_json(llm, [user(prompt)], "generated_dialogue")
    dialogue = GeneratedDialogue.from_dict(value)
    check_alternation(dialogue.conversation)
    if dialogue.conversation[-1].role != DOCTOR:
        raise StructureError("dialogue must end on the doctor's diagnosis turn")
    return dialogue


def find_missing_facts(
    case: PatientCase,
    dialogue: GeneratedDialogue,
    judge: EndpointProfile,
    gateway: Gateway,
) -> list[int]:
    """Finding ids the alignment judge maps to no turn (-1)."""
    alignment = align_findings(case, dialogue.conversation, judge, gateway)
    return sorted(fid for fid, turn in alignment.aligned_turn.items() if turn == -1)


def apply_revision_actions(
    dialogue: GeneratedDialogue, actions: Sequence[RevisionAction]
) -> GeneratedDialogue:
    """Apply critic actions in descending location order so earlier indices
    stay valid.

    add_turn inserts a doctor+patient pair immediately after the (even,
    patient) turn at ``location``. revise_turn replaces content in place:
    doctor text lands on the doctor turn at ``location`` when that turn is
    the doctor's, otherwise on the doctor turn that follows the anchored
    patient turn; patient text (when the critic supplies it) lands on the
    patient turn at ``location``. Roles are never moved, so alternation is
    preserved by construction and re-checked afterwards.
    """
    turns = [Turn(index=t.index, role=t.role, content=t.content) for t in dialogue.conversation]
    for action in sorted(actions, key=lambda a: a.location, reverse=True):
        if not (0 <= action.location < len(turns)):
            raise LocationOutOfRange(
                f"{action.action} at {action.location} outside 0..{len(turns) - 1}"
            )
        if action.action == "add_turn":
            if not action.doctor or not action.patient:
                raise CurationError("add_turn requires doctor and patient text")
            at = action.location
            turns[at + 1 : at + 1] = [
                Turn(index=0, role=DOCTOR, content=action.doctor),
                Turn(index=0, role=PATIENT, content=action.patient),
            ]
        elif action.action == "revise_turn":
            if not action.doctor:
                raise CurationError("revise_turn carries doctor text at minimum")
            at = action.location
            if turns[at].role == DOCTOR:
                turns[at] = Turn(index=0, role=DOCTOR, content=action.doctor)
            else:
                if at + 1 >= len(turns):
                    raise LocationOutOfRange(
                        f"revise_turn at {at}: no doctor turn follows the anchored patient turn"
                    )
                turns[at + 1] = Turn(index=0, role=DOCTOR, content=action.doctor)
                if action.patient:
                    turns[at] = Turn(index=0, role=PATIENT, content=action.patient)
        else:
            raise CurationError(f"unknown revision action {action.action!r}")
    reindexed = tuple(
        Turn(index=i, role=t.role, content=t.content) for i, t in enumerate(turns)
    )
    check_alternation(reindexed)
    return GeneratedDialogue(
        conversation=reindexed, preliminary_diagnosis=dialogue.preliminary_diagnosis
    )


def critique_and_revise(
    case: PatientCase,
    dialogue: GeneratedDialogue,
    missing: Sequence[Finding],
    llm: EndpointProfile,
    gateway: Gateway,
) -> GeneratedDialogue:
    """One critic round: ask for revision actions and apply them."""
    conversation = json.dumps(
        [{"turn": t.index, "role": t.role, "content": t.content} for t in dialogue.conversation],
        ensure_ascii=False,
    )
    prompt = prompts.render(
        "dialogue_revision",
        chief_complaint=case.chief_complaint,
        hpi=case.hpi,
        diagnosis=case.dx,
        missing_facts=json.dumps([f.text for f in missing], ensure_ascii=False),
        conversation=conversation,
    )
    value = gateway.complete_json(llm, [user(prompt)], "revision_actions", temperature=0.0)
    actions = [RevisionAction.from_dict(a) for a in value["critic_res"]]
    return apply_revision_actions(dialogue, actions)


@dataclass(frozen=True)
class CurationResult:
    note_id: str
    status: str  # "ok" | "curation_failed"
    case: PatientCase | None = None
    dialogue: GeneratedDialogue | None = None
    rounds: tuple[dict[str, Any], ...] = ()
    error: str | None = None

    def coverage_report(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "status": self.status,
            "rounds": list(self.rounds),
            "error": self.error,
        }


@dataclass(frozen=True)
class CurationLlms:
    """Endpoints by stage: generation and revision use the curator model,
    extraction/alignment the judge."""

    curator: EndpointProfile
    judge: EndpointProfile


def curate_case(
    note: RawNote,
    llms: CurationLlms,
    gateway: Gateway,
    max_revision_rounds: int = MAX_REVISION_ROUNDS,
    split: str = "train",
) -> CurationResult:
    """Full per-note pipeline: findings -> tree -> dialogue -> revision loop.

    Revision rounds that would lower finding coverage are discarded. Stage
    failures mark the result curation_failed with the stage recorded; the
    note is never silently dropped.
    """
    rounds: list[dict[str, Any]] = []
    stage = "extract_findings"
    try:
        findings = extract_findings(note, llms.judge, gateway)
        case = PatientCase(
            case_id=note.note_id,
            dx=note.diagnosis,
            findings=tuple(findings),
            chief_complaint=note.chief_complaint,
            hpi=note.hpi,
            split=split,
        )
        stage = "build_decision_tree"
        tree = build_decision_tree(case, llms.curator, gateway)
        stage = "generate_dialogue"
        dialogue = generate_dialogue(case, tree, llms.curator, gateway)
        stage = "revision_loop"
        missing_ids = find_missing_facts(case, dialogue, llms.judge, gateway)
        for round_no in range(1, max_revision_rounds + 1):
            if not missing_ids:
                break
            by_id = {f.finding_id: f for f in case.findings}
            revised = critique_and_revise(
                case, dialogue, [by_id[i] for i in missing_ids], llms.curator, gateway
            )
            revised_missing = find_missing_facts(case, revised, llms.judge, gateway)
            accepted = len(revised_missing) <= len(missing_ids)
            rounds.append(
                {
                    "round": round_no,
                    "missing_before": missing_ids,
                    "missing_after": revised_missing,
                    "accepted": accepted,
                }
            )
            if accepted:
                dialogue, missing_ids = revised, revised_missing
        rounds.append(
            {
                "round": "final",
                "covered": len(case.findings) - len(missing_ids),
                "total": len(case.findings),
                "missing": missing_ids,
            }
        )
        return CurationResult(
            note_id=note.note_id, status="ok", case=case, dialogue=dialogue, rounds=tuple(rounds)
        )
    except (CurationError, GatewayError) as exc:
        return CurationResult(
            note_id=note.note_id,
            status="curation_failed",
            rounds=tuple(rounds),
            error=f"{stage}: {type(exc).__name__}: {exc}",
        )
