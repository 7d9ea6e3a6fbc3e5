"""Declarative app configuration.

One YAML file describes the endpoint profile for each model role (doctor,
patient, judge, curator), the reward constants, and the data root.
``${VAR}`` references interpolate from the environment so secrets never
live in the file. Roles default to the in-process scripted model so a fresh
checkout runs the whole pipeline offline.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .domain import DEFAULT_K
from .gateway import EndpointProfile
from .rewards import DEFAULT_ALPHA
from .rollout import DEFAULT_MAX_TURNS

ROLES = ("doctor", "patient", "judge", "curator")

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(Exception):
    pass


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def sub(m: re.Match[str]) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} referenced by config is unset")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _default_endpoint(role: str) -> EndpointProfile:
    # Judges and curators need stability; interview roles need diversity.
    temperature = 0.0 if role in ("judge", "curator") else 0.7
    return EndpointProfile(
        base_url="mock://scripted",
        model_name=f"scripted-{role}",
        temperature=temperature,
    )


@dataclass(frozen=True)
class AppConfig:
    endpoints: dict[str, EndpointProfile]
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_K
    max_turns: int = DEFAULT_MAX_TURNS
    concurrency: int = 8
    data_root: Path = Path("data")
    api_token: str | None = None
    raw: dict[str, Any] = field(default_factory=dict)

    def endpoint(self, role: str) -> EndpointProfile:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ConfigError(f"no endpoint configured for role {role!r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "endpoints": {r: p.to_dict() for r, p in sorted(self.endpoints.items())},
            "alpha": self.alpha,
            "k": self.k,
            "max_turns": self.max_turns,
            "concurrency": self.concurrency,
            "data_root": str(self.data_root),
        }

    def fingerprint(self) -> dict[str, Any]:
        """Hashable view of the semantic configuration: everything that can
        change an artifact's bytes, and nothing that cannot (output paths)."""
        d = self.to_dict()
        d.pop("data_root")
        d.pop("concurrency")
        return d


def default_config(data_root: Path | str = "data") -> AppConfig:
    return AppConfig(
        endpoints={role: _default_endpoint(role) for role in ROLES},
        data_root=Path(data_root),
    )


def load_config(path: Path | str) -> AppConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from None
    raw = _interpolate(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    endpoints: dict[str, EndpointProfile] = {}
    for role in ROLES:
        section = (raw.get("endpoints") or {}).get(role)
        if section is None:
            endpoints[role] = _default_endpoint(role)
            continue
        try:
            profile = EndpointProfile.from_dict(section)
            profile.validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"endpoints.{role}: {exc}") from exc
        endpoints[role] = profile

    try:
        config = AppConfig(
            endpoints=endpoints,
            alpha=float(raw.get("alpha", DEFAULT_ALPHA)),
            k=int(raw.get("k", DEFAULT_K)),
            max_turns=int(raw.get("max_turns", DEFAULT_MAX_TURNS)),
            concurrency=int(raw.get("concurrency", 8)),
            data_root=Path(raw.get("data_root", "data")),
            api_token=raw.get("api_token") or None,
            raw=raw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if config.k < 1 or config.max_turns < 1 or config.concurrency < 1:
        raise ConfigError("k, max_turns and concurrency must all be >= 1")
    return config
