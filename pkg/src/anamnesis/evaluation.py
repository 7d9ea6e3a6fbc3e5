"""Benchmark metrics over scored trajectories, the symptom-category recall
breakdown, the patient-agent reliability audit, and report rendering.

Precision is taken over questions asked (the forced-diagnosis call at the
turn cap is not a question and never enters the denominator); recall over
the case's documented findings; F1 is their harmonic mean, defined as 0 at
(0, 0). Aggregates are arithmetic means over cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import fmean
from typing import Any, Mapping, Sequence

from . import prompts
from .domain import DEFAULT_K, DOCTOR, DomainError, PatientCase, SocratesCategory, Trajectory
from .gateway import EndpointProfile, Gateway, GatewayError, user
from .rewards import FindingAlignment, ScoredTrajectory


class UncategorizedFindings(Exception):
    def __init__(self, missing: list[tuple[str, int]]):
        super().__init__(f"{len(missing)} findings carry no category")
        self.missing = missing


class CorpusMismatch(Exception):
    pass


@dataclass(frozen=True)
class TrajectoryMetrics:
    precision: float
    recall: float
    f1: float
    top_k_hits: tuple[bool, ...]  # index i holds the top-(i+1) indicator
    total_turns: int
    doctor_questions: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "top_k_hits": list(self.top_k_hits),
            "total_turns": self.total_turns,
            "doctor_questions": self.doctor_questions,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrajectoryMetrics":
        return cls(
            precision=float(d["precision"]),
            recall=float(d["recall"]),
            f1=float(d["f1"]),
            top_k_hits=tuple(bool(b) for b in d["top_k_hits"]),
            total_turns=int(d["total_turns"]),
            doctor_questions=int(d["doctor_questions"]),
        )


def trajectory_metrics(
    elicited: int,
    rank: int | None,
    t: int,
    n_findings: int,
    k: int = DEFAULT_K,
) -> TrajectoryMetrics:
    """Per-trajectory elicitation and diagnosis metrics.

    ``elicited`` findings against ``t`` questions asked and ``n_findings``
    documented facts. Precision is capped at 1 (one question can surface
    several findings, which would otherwise push the ratio above 1).
    """
    if n_findings < 1:
        raise DomainError("trajectory_metrics: n_findings must be >= 1")
    if t < 0 or elicited < 0:
        raise DomainError("trajectory_metrics: t and elicited must be >= 0")
    if elicited > n_findings:
        raise DomainError("trajectory_metrics: elicited cannot exceed n_findings")
    precision = 0.0 if t == 0 else min(1.0, elicited / t)
    recall = elicited / n_findings
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    hits = tuple(rank is not None and rank <= kk for kk in range(1, k + 1))
    return TrajectoryMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        top_k_hits=hits,
        total_turns=0,
        doctor_questions=t,
    )


def metrics_for_scored(scored: ScoredTrajectory, k: int = DEFAULT_K) -> TrajectoryMetrics:
    m = trajectory_metrics(
        elicited=len(scored.alignment.elicited_ids()),
        rank=scored.breakdown.rank,
        t=scored.trajectory.num_doctor_questions,
        n_findings=len(scored.alignment.aligned_turn),
        k=k,
    )
    return TrajectoryMetrics(
        precision=m.precision,
        recall=m.recall,
        f1=m.f1,
        top_k_hits=m.top_k_hits,
        total_turns=scored.trajectory.total_turns,
        doctor_questions=scored.trajectory.num_doctor_questions,
    )


@dataclass(frozen=True)
class CorpusReport:
    """Aggregate means over cases for one model/run."""

    run_id: str
    case_count: int
    k: int
    f1: float
    recall: float
    precision: float
    top_k: tuple[float, ...]
    mean_total_turns: float
    mean_doctor_questions: float
    mean_reward: float
    category_recall: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "case_count": self.case_count,
            "k": self.k,
            "f1": self.f1,
            "recall": self.recall,
            "precision": self.precision,
            "top_k": list(self.top_k),
            "mean_total_turns": self.mean_total_turns,
            "mean_doctor_questions": self.mean_doctor_questions,
            "mean_reward": self.mean_reward,
            "category_recall": dict(self.category_recall),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CorpusReport":
        return cls(
            run_id=str(d["run_id"]),
            case_count=int(d["case_count"]),
            k=int(d["k"]),
            f1=float(d["f1"]),
            recall=float(d["recall"]),
            precision=float(d["precision"]),
            top_k=tuple(float(x) for x in d["top_k"]),
            mean_total_turns=float(d["mean_total_turns"]),
            mean_doctor_questions=float(d["mean_doctor_questions"]),
            mean_reward=float(d["mean_reward"]),
            category_recall={str(k2): float(v) for k2, v in d.get("category_recall", {}).items()},
        )


def corpus_report(
    run_id: str,
    scored: Sequence[ScoredTrajectory],
    k: int = DEFAULT_K,
    category_recall_map: Mapping[str, float] | None = None,
) -> CorpusReport:
    """Mean each metric per case first, then arithmetic-mean over cases."""
    if not scored:
        raise DomainError("corpus_report: no scored trajectories")
    per_case: dict[str, list[TrajectoryMetrics]] = {}
    rewards_per_case: dict[str, list[float]] = {}
    for s in scored:
        per_case.setdefault(s.trajectory.case_id, []).append(metrics_for_scored(s, k=k))
        rewards_per_case.setdefault(s.trajectory.case_id, []).append(s.breakdown.total)

    def case_mean(metric) -> float:
        return fmean(fmean(metric(m) for m in ms) for ms in per_case.values())

    top_k = tuple(
        case_mean(lambda m, i=i: 1.0 if m.top_k_hits[i] else 0.0) for i in range(k)
    )
    return CorpusReport(
        run_id=run_id,
        case_count=len(per_case),
        k=k,
        f1=case_mean(lambda m: m.f1),
        recall=case_mean(lambda m: m.recall),
        precision=case_mean(lambda m: m.precision),
        top_k=top_k,
        mean_total_turns=case_mean(lambda m: float(m.total_turns)),
        mean_doctor_questions=case_mean(lambda m: float(m.doctor_questions)),
        mean_reward=fmean(fmean(v) for v in rewards_per_case.values()),
        category_recall=dict(category_recall_map or {}),
    )


def render_report_table(report: CorpusReport) -> str:
    """Text table with the familiar benchmark columns (percentages)."""
    headers = ["Run", "F1", "Recall", "Precision", "Top-1", "Top-2", "Top-3", "#Turn"]
    row = [
        report.run_id,
        f"{100 * report.f1:.1f}",
        f"{100 * report.recall:.1f}",
        f"{100 * report.precision:.1f}",
        *(f"{100 * report.top_k[i]:.1f}" if i < len(report.top_k) else "-" for i in range(3)),
        f"{report.mean_total_turns:.1f}",
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    line = " | ".join(h.ljust(w) for h, w in zip(headers, widths))
    sep = "-+-".join("-" * w for w in widths)
    values = " | ".join(v.ljust(w) for v, w in zip(row, widths))
    return "\n".join([line, sep, values])


def category_recall(
    cases: Sequence[PatientCase],
    alignments: Mapping[str, FindingAlignment],
) -> dict[str, float]:
    """Recall per symptom category across the corpus: elicited-in-category
    over total-in-category. Categories with no findings are absent from the
    result rather than reported as 0."""
    missing: list[tuple[str, int]] = []
    elicited_by_cat: dict[SocratesCategory, int] = {}
    total_by_cat: dict[SocratesCategory, int] = {}
    for case in cases:
        alignment = alignments.get(case.case_id)
        if alignment is None:
            continue
        elicited_ids = alignment.elicited_ids()
        for f in case.findings:
            if f.category is None:
                missing.append((case.case_id, f.finding_id))
                continue
            total_by_cat[f.category] = total_by_cat.get(f.category, 0) + 1
            if f.finding_id in elicited_ids:
                elicited_by_cat[f.category] = elicited_by_cat.get(f.category, 0) + 1
    if missing:
        raise UncategorizedFindings(missing)
    return {
        cat.value: elicited_by_cat.get(cat, 0) / total
        for cat, total in total_by_cat.items()
    }


@dataclass(frozen=True)
class ReliabilityReport:
    """Patient-agent audit rates, both on a 0-100 scale."""

    information_control_rate: float
    factual_conflict_rate: float
    turns_audited: int
    turns_skipped: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "information_control_rate": self.information_control_rate,
            "factual_conflict_rate": self.factual_conflict_rate,
            "turns_audited": self.turns_audited,
            "turns_skipped": self.turns_skipped,
        }


def audit_patient(
    trajectories: Sequence[Trajectory],
    cases: Mapping[str, PatientCase],
    judge: EndpointProfile,
    gateway: Gateway,
) -> ReliabilityReport:
    """Judge every answering patient turn for unsolicited disclosure and
    note contradiction. The opener states the chief complaint by protocol
    and is not audited. Judge failures drop the turn from the denominator
    and are counted."""
    audited = 0
    skipped = 0
    controlled = 0
    conflicting = 0
    for traj in trajectories:
        case = cases.get(traj.case_id)
        if case is None:
            continue
        note = f"Chief Complaint: {case.chief_complaint}\nHPI: {case.hpi or ' '.join(f.text for f in case.findings)}"
        for i in range(2, len(traj.turns), 2):
            reply = traj.turns[i]
            question = traj.turns[i - 1]
            if reply.role == DOCTOR or question.role != DOCTOR:
                continue
            prompt = prompts.render(
                "patient_audit",
                note=note,
                question=question.content,
                reply=reply.content,
            )
            try:
                verdict = gateway.complete_json(judge, [user(prompt)], "patient_audit", temperature=0.0)
            except GatewayError:
                skipped += 1
                continue
            audited += 1
            if not verdict["unsolicited_disclosure"]:
                controlled += 1
            if verdict["factual_conflict"]:
                conflicting += 1
    if audited == 0:
        return ReliabilityReport(0.0, 0.0, 0, skipped)
    return ReliabilityReport(
        information_control_rate=100.0 * controlled / audited,
        factual_conflict_rate=100.0 * conflicting / audited,
        turns_audited=audited,
        turns_skipped=skipped,
    )


def compare_runs(report_a: CorpusReport, report_b: CorpusReport) -> dict[str, Any]:
    """Per-metric deltas (b minus a) with relative gains, for ablation-style
    side-by-side comparisons. Both reports must cover the same corpus."""
    if report_a.case_count != report_b.case_count or report_a.k != report_b.k:
        raise CorpusMismatch("reports cover different corpora or k values")
    out: dict[str, Any] = {"run_a": report_a.run_id, "run_b": report_b.run_id, "metrics": {}}
    pairs = {
        "f1": (report_a.f1, report_b.f1),
        "recall": (report_a.recall, report_b.recall),
        "precision": (report_a.precision, report_b.precision),
        "mean_total_turns": (report_a.mean_total_turns, report_b.mean_total_turns),
        "mean_reward": (report_a.mean_reward, report_b.mean_reward),
    }
    for i in range(min(len(report_a.top_k), len(report_b.top_k))):
        pairs[f"top_{i + 1}"] = (report_a.top_k[i], report_b.top_k[i])
    for name, (a, b) in pairs.items():
        delta = b - a
        out["metrics"][name] = {
            "a": a,
            "b": b,
            "delta": delta,
            "relative_gain": None if a == 0 else delta / abs(a),
        }
    return out
