"""Command-line front end: one subcommand per pipeline stage.

Every stage reads and writes plain files under the configured data root,
records a config hash in its manifest, and is idempotent for identical
inputs. Failures exit nonzero with a machine-readable error report on
stderr.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from . import curation, datasets, evaluation, rewards, schemas
from .agents import DoctorProfile, PatientProfile, build_vignette, classify_finding_category
from .config import AppConfig, ConfigError, default_config, load_config
from .domain import (
    CaseCorpus,
    PatientCase,
    Trajectory,
    Turn,
    load_corpus,
    read_jsonl,
    validate_corpus,
    write_jsonl,
)
from .gateway import Gateway
from .mockmodel import routing_transport
from .rollout import Campaign, config_hash, run_campaign
from .store import Store


class StageFailure(click.ClickException):
    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage
        self.detail = detail

    def show(self, file=None) -> None:
        report = {"error": {"stage": self.stage, "detail": self.detail}}
        click.echo(json.dumps(report), err=True)


def _build_gateway(config: AppConfig, store: Store) -> Gateway:
    return Gateway(
        transport=routing_transport,
        audit_log=store.audit_log_path,
        max_in_flight=config.concurrency,
    )


def bundled_notes_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("anamnesis").joinpath("data/synthetic_notes.jsonl")))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--data-root", type=click.Path(), default=None, help="Override the data root.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, data_root: str | None) -> None:
    """Note-grounded history-taking pipelines: curate, roll out, score,
    export training data, evaluate, and serve the interview API."""
    try:
        config = load_config(config_path) if config_path else default_config()
    except ConfigError as exc:
        raise StageFailure("config", str(exc)) from exc
    if data_root:
        config = replace(config, data_root=Path(data_root))
    store = Store(config.data_root)
    ctx.obj = {"config": config, "store": store}


def _ctx(ctx: click.Context) -> tuple[AppConfig, Store]:
    return ctx.obj["config"], ctx.obj["store"]


def _load_cases(store: Store) -> CaseCorpus:
    if not store.cases_path.exists():
        raise StageFailure("input", f"no case corpus at {store.cases_path}; run curate first")
    corpus = load_corpus(store.cases_path)
    problems = validate_corpus(corpus)
    if problems:
        raise StageFailure("input", f"corpus invalid: {problems[:5]}")
    return corpus


def _dialogue_turns(record: dict) -> list[Turn]:
    return [
        Turn(index=i, role=str(m["role"]), content=str(m["content"]))
        for i, m in enumerate(record["conversation"])
    ]


def _write_dataset(store: Store, name: str, rows: list[dict], manifest_extra: dict) -> None:
    bad = schemas.validate_export_lines(name, (json.dumps(r, ensure_ascii=False) for r in rows))
    if bad:
        lineno, message = bad[0]
        raise StageFailure(f"dataset-{name}", f"line {lineno}: {message}")
    write_jsonl(store.dataset_path(name), rows)
    store.write_json(
        store.dataset_manifest_path(name),
        {"dataset": name, "count": len(rows), **manifest_extra},
    )


# -- curate -------------------------------------------------------------------

@main.command()
@click.option("--notes", "notes_path", type=click.Path(), default=None, help="Notes JSONL; defaults to the bundled synthetic set.")
@click.option("--max-revision-rounds", default=curation.MAX_REVISION_ROUNDS, show_default=True)
@click.pass_context
def curate(ctx: click.Context, notes_path: str | None, max_revision_rounds: int) -> None:
    """Turn medical notes into cases and seed dialogues."""
    config, store = _ctx(ctx)
    gateway = _build_gateway(config, store)
    path = Path(notes_path) if notes_path else bundled_notes_path()
    if not path.exists():
        raise StageFailure("curate", f"notes file not found: {path}")
    notes = [curation.RawNote.from_dict(d) for d in read_jsonl(path)]
    kept = curation.filter_notes(notes)
    click.echo(f"filtered notes: kept {len(kept)} of {len(notes)}")

    llms = curation.CurationLlms(curator=config.endpoint("curator"), judge=config.endpoint("judge"))

    def one(note: curation.RawNote) -> curation.CurationResult:
        return curation.curate_case(note, llms, gateway, max_revision_rounds=max_revision_rounds)

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        results = list(pool.map(one, kept))

    ok = [r for r in results if r.status == "ok"]
    cases = [r.case.to_dict() for r in ok if r.case is not None]
    dialogues = [
        {"case_id": r.case.case_id, **r.dialogue.to_dict()}
        for r in ok
        if r.case is not None and r.dialogue is not None
    ]
    write_jsonl(store.cases_path, cases)
    write_jsonl(store.dialogues_path, dialogues)
    store.write_json(
        store.coverage_path,
        {
            "config_hash": config_hash(config.fingerprint()),
            "notes_seen": len(notes),
            "notes_kept": len(kept),
            "curated": len(ok),
            "failed": len(results) - len(ok),
            "cases": [r.coverage_report() for r in results],
        },
    )
    click.echo(f"curated {len(ok)} cases -> {store.cases_path}")
    if len(ok) < len(results):
        click.echo(f"{len(results) - len(ok)} notes failed curation (see coverage report)", err=True)


# -- rollout ------------------------------------------------------------------

@main.command()
@click.option("--campaign-id", required=True)
@click.option("--rollouts", default=3, show_default=True, help="Sessions per case.")
@click.option("--seed", default=0, show_default=True)
@click.option("--doctor-style", type=click.Choice(["pre_trained", "fine_tuned"]), default="pre_trained", show_default=True)
@click.option("--reasoning", type=click.Choice(["none", "single_turn"]), default="none", show_default=True)
@click.pass_context
def rollout(ctx: click.Context, campaign_id: str, rollouts: int, seed: int, doctor_style: str, reasoning: str) -> None:
    """Self-play sessions over the curated corpus."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    gateway = _build_gateway(config, store)
    campaign = Campaign(
        campaign_id=campaign_id,
        rollouts_per_case=rollouts,
        max_turns=config.max_turns,
        k=config.k,
        seed=seed,
        concurrency=config.concurrency,
    )
    doctor = DoctorProfile(
        endpoint=config.endpoint("doctor"), prompt_style=doctor_style, reasoning_mode=reasoning
    )
    trajectories, manifest = run_campaign(campaign, corpus, doctor, config.endpoint("patient"), gateway)
    write_jsonl(store.trajectories_path(campaign_id), (t.to_dict() for t in trajectories))
    store.write_json(store.campaign_manifest_path(campaign_id), manifest)
    click.echo(
        f"rolled out {len(trajectories)} trajectories -> {store.trajectories_path(campaign_id)} "
        f"({manifest['terminated_by']})"
    )


# -- score --------------------------------------------------------------------

@main.command()
@click.option("--campaign-id", required=True)
@click.pass_context
def score(ctx: click.Context, campaign_id: str) -> None:
    """Judge-align and reward every trajectory of a campaign, per-case
    candidate pools sharing recall_max."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    gateway = _build_gateway(config, store)
    traj_path = store.trajectories_path(campaign_id)
    if not traj_path.exists():
        raise StageFailure("score", f"no trajectories at {traj_path}")
    trajectories = [Trajectory.from_dict(d) for d in read_jsonl(traj_path)]

    grouped: dict[str, list[Trajectory]] = {}
    order: list[str] = []
    for t in trajectories:
        if t.case_id not in grouped:
            order.append(t.case_id)
        grouped.setdefault(t.case_id, []).append(t)

    rows: list[dict] = []
    unscored_total = 0
    for case_id in order:
        case = corpus.by_id(case_id)
        if case is None:
            for t in grouped[case_id]:
                rows.append({"session_id": t.session_id, "case_id": case_id, "unscored": True, "error": "unknown case"})
                unscored_total += 1
            continue
        scored, unscored = rewards.score_candidate_set(
            case, grouped[case_id], config.endpoint("judge"), gateway, alpha=config.alpha, k=config.k
        )
        by_sid = {s.trajectory.session_id: s for s in scored}
        failed = {t.session_id: err for t, err in unscored}
        for t in grouped[case_id]:
            if t.session_id in by_sid:
                rows.append(by_sid[t.session_id].to_dict())
            else:
                rows.append(
                    {
                        "session_id": t.session_id,
                        "case_id": case_id,
                        "unscored": True,
                        "error": failed.get(t.session_id, "unknown"),
                    }
                )
                unscored_total += 1
    write_jsonl(store.scores_path(campaign_id), rows)
    click.echo(f"scored {len(rows) - unscored_total}/{len(rows)} trajectories -> {store.scores_path(campaign_id)}")
    if unscored_total:
        click.echo(f"{unscored_total} trajectories left unscored (judge errors)", err=True)


def _load_scored(store: Store, campaign_id: str) -> list[rewards.ScoredTrajectory]:
    path = store.scores_path(campaign_id)
    if not path.exists():
        raise StageFailure("input", f"no scores at {path}; run score first")
    return [
        rewards.ScoredTrajectory.from_dict(d)
        for d in read_jsonl(path)
        if not d.get("unscored")
    ]


# -- dataset ------------------------------------------------------------------

@main.group()
def dataset() -> None:
    """Training-data exports (sft, selfaug, mt-pairs, st-units, st-pairs)."""


@dataset.command("sft")
@click.pass_context
def dataset_sft(ctx: click.Context) -> None:
    """SFT chat records from the curated dialogues."""
    config, store = _ctx(ctx)
    if not store.dialogues_path.exists():
        raise StageFailure("dataset-sft", f"no dialogues at {store.dialogues_path}")
    dialogue_records = read_jsonl(store.dialogues_path)
    pairs = [(str(d["case_id"]), _dialogue_turns(d)) for d in dialogue_records]
    records, skipped = datasets.export_sft(pairs, provenance="curated")
    _write_dataset(
        store,
        "sft",
        [r.to_dict() for r in records],
        {"skipped": skipped, "config_hash": config_hash(config.fingerprint())},
    )
    click.echo(f"wrote {len(records)} SFT records ({len(skipped)} skipped) -> {store.dataset_path('sft')}")


@dataset.command("selfaug")
@click.option("--campaign-id", required=True)
@click.pass_context
def dataset_selfaug(ctx: click.Context, campaign_id: str) -> None:
    """Best correct-diagnosis rollout per case, exported as SFT records."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    scored = _load_scored(store, campaign_id)
    grouped: dict[str, list[rewards.ScoredTrajectory]] = {}
    for s in scored:
        grouped.setdefault(s.trajectory.case_id, []).append(s)
    records = []
    for case in corpus.cases:
        pool = grouped.get(case.case_id, [])
        for chosen in datasets.select_self_augmented(case, pool):
            record, reason = datasets.sft_record_from_turns(
                case.case_id, chosen.trajectory.turns, provenance="self_augmented"
            )
            if record is not None:
                records.append(record.to_dict())
    _write_dataset(
        store,
        "self_aug",
        records,
        {"campaign_id": campaign_id, "config_hash": config_hash(config.fingerprint())},
    )
    click.echo(f"selected {len(records)} self-augmented dialogues -> {store.dataset_path('self_aug')}")


@dataset.command("mt-pairs")
@click.option("--campaign-id", required=True)
@click.option("--max-low-per-high", default=2, show_default=True)
@click.pass_context
def dataset_mt_pairs(ctx: click.Context, campaign_id: str, max_low_per_high: int) -> None:
    """Dialogue-level preference pairs from mu/sigma selection."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    scored = _load_scored(store, campaign_id)
    grouped: dict[str, list[rewards.ScoredTrajectory]] = {}
    for s in scored:
        grouped.setdefault(s.trajectory.case_id, []).append(s)
    rows: list[dict] = []
    stats_by_case: dict[str, dict] = {}
    for case in corpus.cases:
        pool = grouped.get(case.case_id, [])
        if len(pool) < 2:
            continue
        pairs, stats = datasets.build_mt_pairs(case, pool, max_low_per_high=max_low_per_high)
        rows.extend(p.to_dict() for p in pairs)
        stats_by_case[case.case_id] = stats.to_dict()
    _write_dataset(
        store,
        "mt_pairs",
        rows,
        {
            "campaign_id": campaign_id,
            "selection_stats": stats_by_case,
            "config_hash": config_hash(config.fingerprint()),
        },
    )
    click.echo(f"built {len(rows)} dialogue-level pairs -> {store.dataset_path('mt_pairs')}")


@dataset.command("st-units")
@click.option("--campaign-id", default=None, help="Also decompose this campaign's self-augmented picks.")
@click.pass_context
def dataset_st_units(ctx: click.Context, campaign_id: str | None) -> None:
    """Decompose dialogues into single doctor turns with reasoning blocks."""
    config, store = _ctx(ctx)
    gateway = _build_gateway(config, store)
    sources: list[tuple[str, list[Turn]]] = []
    if store.dialogues_path.exists():
        for d in read_jsonl(store.dialogues_path):
            sources.append((str(d["case_id"]), _dialogue_turns(d)))
    if campaign_id:
        corpus = _load_cases(store)
        scored = _load_scored(store, campaign_id)
        grouped: dict[str, list[rewards.ScoredTrajectory]] = {}
        for s in scored:
            grouped.setdefault(s.trajectory.case_id, []).append(s)
        for case in corpus.cases:
            for chosen in datasets.select_self_augmented(case, grouped.get(case.case_id, [])):
                sources.append((case.case_id, list(chosen.trajectory.turns)))
    if not sources:
        raise StageFailure("dataset-st-units", "no dialogues to decompose")
    curator = config.endpoint("curator")
    rows: list[dict] = []
    for case_id, turns in sources:
        for unit in datasets.decompose_to_turns(case_id, turns):
            unit = datasets.generate_reasoning_blocks(unit, curator, gateway)
            rows.append(unit.to_dict())
    _write_dataset(store, "st_units", rows, {"config_hash": config_hash(config.fingerprint())})
    click.echo(f"decomposed {len(rows)} single-turn units -> {store.dataset_path('st_units')}")


@dataset.command("st-pairs")
@click.option("--candidates", default=10, show_default=True, help="Candidate responses per turn.")
@click.option("--max-units", default=None, type=int, help="Cap on units to expand (desk-scale runs).")
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def dataset_st_pairs(ctx: click.Context, candidates: int, max_units: int | None, seed: int) -> None:
    """Turn-level preference pairs: roll out candidates per context and
    contrast the reward extremes."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    gateway = _build_gateway(config, store)
    units_path = store.dataset_path("st_units")
    if not units_path.exists():
        raise StageFailure("dataset-st-pairs", f"no units at {units_path}; run st-units first")
    units = [datasets.TurnUnit.from_dict(d) for d in read_jsonl(units_path)]
    if max_units is not None:
        units = units[:max_units]
    doctor = DoctorProfile(
        endpoint=config.endpoint("doctor"), prompt_style="fine_tuned", reasoning_mode="single_turn"
    )
    rows: list[dict] = []
    for i, unit in enumerate(units):
        case = corpus.by_id(unit.case_id)
        if case is None:
            continue
        patient = PatientProfile(endpoint=config.endpoint("patient"), vignette=build_vignette(case))
        cands = datasets.rollout_st_candidates(
            case,
            unit,
            doctor,
            patient,
            config.endpoint("judge"),
            gateway,
            n_candidates=candidates,
            k=config.k,
            seed=seed * 10_000 + i,
        )
        for pair in datasets.build_st_pairs(unit.case_id, unit.context, cands):
            rows.append(pair.to_dict())
    _write_dataset(
        store,
        "st_pairs",
        rows,
        {"units": len(units), "candidates_per_unit": candidates, "config_hash": config_hash(config.fingerprint())},
    )
    click.echo(f"built {len(rows)} turn-level pairs -> {store.dataset_path('st_pairs')}")


# -- eval ---------------------------------------------------------------------

@main.command("eval")
@click.option("--campaign-id", required=True)
@click.option("--run-id", default=None, help="Report name; defaults to the campaign id.")
@click.option("--category-csv", type=click.Path(), default=None, help="Also write per-category recall CSV (classifies findings via the judge).")
@click.pass_context
def eval_cmd(ctx: click.Context, campaign_id: str, run_id: str | None, category_csv: str | None) -> None:
    """Aggregate metrics over a scored campaign into a report."""
    config, store = _ctx(ctx)
    scored = _load_scored(store, campaign_id)
    if not scored:
        raise StageFailure("eval", "no scored trajectories to evaluate")
    run_id = run_id or campaign_id

    category_map: dict[str, float] | None = None
    if category_csv:
        corpus = _load_cases(store)
        gateway = _build_gateway(config, store)
        judge = config.endpoint("judge")
        categorized: list[PatientCase] = []
        for case in corpus.cases:
            findings = tuple(
                f if f.category is not None else replace(f, category=classify_finding_category(f, judge, gateway))
                for f in case.findings
            )
            categorized.append(replace(case, findings=findings))
        alignments = {s.trajectory.case_id: s.alignment for s in scored}
        category_map = evaluation.category_recall(categorized, alignments)
        import csv

        with open(category_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "recall"])
            for name, value in sorted(category_map.items()):
                writer.writerow([name, f"{value:.6f}"])

    report = evaluation.corpus_report(run_id, scored, k=config.k, category_recall_map=category_map)
    store.write_json(store.report_path(run_id), report.to_dict())
    table = evaluation.render_report_table(report)
    from .domain import atomic_write_text

    atomic_write_text(store.report_table_path(run_id), table + "\n")
    click.echo(table)
    click.echo(f"report -> {store.report_path(run_id)}")


@main.command("audit-patient")
@click.option("--campaign-id", required=True)
@click.option("--run-id", default=None)
@click.pass_context
def audit_patient_cmd(ctx: click.Context, campaign_id: str, run_id: str | None) -> None:
    """Patient-agent reliability audit over a campaign's trajectories."""
    config, store = _ctx(ctx)
    corpus = _load_cases(store)
    gateway = _build_gateway(config, store)
    traj_path = store.trajectories_path(campaign_id)
    if not traj_path.exists():
        raise StageFailure("audit-patient", f"no trajectories at {traj_path}")
    trajectories = [Trajectory.from_dict(d) for d in read_jsonl(traj_path)]
    cases = {c.case_id: c for c in corpus.cases}
    report = evaluation.audit_patient(trajectories, cases, config.endpoint("judge"), gateway)
    run_id = run_id or f"{campaign_id}-reliability"
    store.write_json(store.report_path(run_id), report.to_dict())
    click.echo(
        f"information control {report.information_control_rate:.1f}%, "
        f"factual conflict {report.factual_conflict_rate:.1f}% "
        f"({report.turns_audited} turns) -> {store.report_path(run_id)}"
    )


# -- serve ----------------------------------------------------------------------

@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.pass_context
def serve(ctx: click.Context, host: str, port: int) -> None:
    """Run the interview HTTP API."""
    import uvicorn

    from .service import create_app

    config, store = _ctx(ctx)
    try:
        app = create_app(config, store=store)
    except FileNotFoundError as exc:
        raise StageFailure("serve", str(exc)) from exc
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
