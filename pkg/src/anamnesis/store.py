"""File-backed persistence under one data root.

Artifacts are plain JSONL/JSON files so they double as the training
exports and diff cleanly. Batch outputs are written whole via
write-then-rename; live sessions append one event per state change to an
append-only log and are rebuilt by replay, so a restart loses nothing that
was ever acknowledged.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

from .domain import dumps_record, read_json, read_jsonl, write_json, write_jsonl


class Store:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    # -- layout ------------------------------------------------------------

    @property
    def cases_path(self) -> Path:
        return self.root / "cases.jsonl"

    @property
    def dialogues_path(self) -> Path:
        return self.root / "dialogues.jsonl"

    @property
    def coverage_path(self) -> Path:
        return self.root / "coverage_report.json"

    def trajectories_path(self, campaign_id: str) -> Path:
        return self.root / "trajectories" / f"{campaign_id}.jsonl"

    def campaign_manifest_path(self, campaign_id: str) -> Path:
        return self.root / "trajectories" / f"{campaign_id}.manifest.json"

    def scores_path(self, campaign_id: str) -> Path:
        return self.root / "scores" / f"{campaign_id}.jsonl"

    def dataset_path(self, name: str) -> Path:
        return self.root / "datasets" / f"{name}.jsonl"

    def dataset_manifest_path(self, name: str) -> Path:
        return self.root / "datasets" / f"{name}.manifest.json"

    def report_path(self, run_id: str) -> Path:
        return self.root / "reports" / f"{run_id}.json"

    def report_table_path(self, run_id: str) -> Path:
        return self.root / "reports" / f"{run_id}.txt"

    @property
    def audit_log_path(self) -> Path:
        return self.root / "audit" / "gateway.jsonl"

    def sessions_dir(self) -> Path:
        return self.root / "sessions"

    def session_events_path(self, session_id: str) -> Path:
        return self.sessions_dir() / f"{session_id}.events.jsonl"

    # -- generic helpers -----------------------------------------------------

    def write_jsonl(self, path: Path, rows: Any) -> int:
        return write_jsonl(path, rows)

    def read_jsonl(self, path: Path) -> list[dict[str, Any]]:
        return read_jsonl(path)

    def write_json(self, path: Path, obj: Any) -> None:
        write_json(path, obj)

    def read_json(self, path: Path) -> Any:
        return read_json(path)

    # -- session event log -----------------------------------------------------

    def append_session_event(self, session_id: str, event: dict[str, Any]) -> None:
        path = self.session_events_path(session_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_record(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def read_session_events(self, session_id: str) -> list[dict[str, Any]]:
        path = self.session_events_path(session_id)
        if not path.exists():
            return []
        return read_jsonl(path)

    def list_session_ids(self) -> list[str]:
        directory = self.sessions_dir()
        if not directory.exists():
            return []
        return sorted(p.name.removesuffix(".events.jsonl") for p in directory.glob("*.events.jsonl"))

    def save_session_score(self, session_id: str, payload: dict[str, Any]) -> None:
        write_json(self.sessions_dir() / f"{session_id}.score.json", payload)

    def load_session_score(self, session_id: str) -> dict[str, Any] | None:
        path = self.sessions_dir() / f"{session_id}.score.json"
        if not path.exists():
            return None
        return read_json(path)
