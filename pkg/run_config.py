#!/usr/bin/env python3
"""
Run configuration: one JSON document holding every module's settings.

Sections map onto the per-module dataclasses; anything missing keeps its
default. Unknown keys are rejected with the dotted path of the offending
field.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from adapter_head import AdapterConfig
from encoder_egnn import EncoderConfig
from errors import ConfigError
from graph_builder import GraphConfig
from plm_backend import BackendConfig
from structure_io import CDR_NAMES
from training import LossWeights, PhaseConfig, ScheduleConfig

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "config.resolved.json"

SECTIONS = {
    "graph": GraphConfig,
    "encoder": EncoderConfig,
    "backend": BackendConfig,
    "adapter": AdapterConfig,
    "loss": LossWeights,
    "schedule": ScheduleConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    cdr: str = "H3"
    precision: str = "f64"
    threads: int = 1
    graph: GraphConfig = field(default_factory=GraphConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        if self.cdr not in CDR_NAMES:
            raise ValueError(f"cdr must be one of {CDR_NAMES}, got {self.cdr!r}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """sha256 of the canonical JSON form (threads excluded, it does not change results)."""
        data = self.to_dict()
        data.pop("threads")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply CLI overrides; None values are ignored, backend_kind sets backend.kind."""
        kind = overrides.pop("backend_kind", None)
        cfg = replace(self, **{k: v for k, v in overrides.items() if v is not None})
        if kind is not None:
            cfg = replace(cfg, backend=replace(cfg.backend, kind=kind))
        return cfg


def _build(cls, data: Any, path: str, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path, prefix)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", path, f"{prefix}.{key}" if prefix else key)
    kwargs = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if cls is RunConfig and key in SECTIONS:
            kwargs[key] = _build(SECTIONS[key], value, path, dotted)
        elif cls is ScheduleConfig and key == "phases":
            if not isinstance(value, list):
                raise ConfigError("expected a list of phases", path, dotted)
            kwargs[key] = tuple(_build(PhaseConfig, p, path, f"{dotted}[{i}]") for i, p in enumerate(value))
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), path, prefix) from None


def config_from_dict(data: dict, path: str = "<dict>") -> RunConfig:
    return _build(RunConfig, data, path, "")


def load_config(path: Optional[Path | str]) -> RunConfig:
    """Load a RunConfig from JSON; no path means all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", str(path))
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON ({e})", str(path)) from None
    cfg = config_from_dict(data, str(path))
    logger.info(f"Loaded config {path} (hash {cfg.hash()[:12]})")
    return cfg
