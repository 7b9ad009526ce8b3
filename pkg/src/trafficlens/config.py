"""Runtime configuration.

A single JSON document holds paths, thresholds, and backend settings;
command-line flags override file values.  Unknown keys are rejected so
typos fail loudly, and the effective configuration is echoed into every
report for provenance.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError

ENV_VAR = "TRAFFICLENS_CONFIG"


@dataclass
class Config:
    # paths
    store_root: str = "store"
    masks_path: str | None = None
    atspm_paths: list[str] = field(default_factory=list)
    detector_map: dict[int, int] = field(default_factory=dict)  # detector -> phase

    # preprocessing thresholds
    min_duration_s: float = 120.0
    min_clip_length_m: float = 150.0
    corridor_half_width_m: float = 35.0
    intersection_radius_m: float = 125.0
    gap_flag_s: float = 30.0
    include_gapped: bool = True

    # analytics thresholds
    stop_speed_threshold_mps: float = 1.0
    stop_min_duration_s: float = 3.0
    queue_min_stop_s: float = 10.0
    braking_threshold_g: float = 0.47
    braking_sustain_s: float = 2.0

    # detection
    abod_neighbors: int = 10
    contamination: float = 0.1
    atspm_threshold: float = 0.4
    detector_on_code: int = 82
    features: list[str] = field(default_factory=lambda: [
        "stopped_time", "avg_speed", "speed_std", "travel_time"])
    normalize_pool: str = "pooled"

    # simulation / sweeps
    backend: str = "toy"
    workers: int = 1
    external_command: str | None = None
    external_timeout_s: float = 300.0

    _POSITIVE = ("min_duration_s", "min_clip_length_m", "corridor_half_width_m",
                 "intersection_radius_m", "gap_flag_s", "stop_speed_threshold_mps",
                 "stop_min_duration_s", "queue_min_stop_s", "braking_threshold_g",
                 "braking_sustain_s", "atspm_threshold", "external_timeout_s")

    def validate(self) -> "Config":
        for name in self._POSITIVE:
            if not getattr(self, name) > 0:
                raise InputError(f"config {name} must be positive")
        if not 0 < self.contamination < 0.5:
            raise InputError("config contamination must be in (0, 0.5)")
        if self.abod_neighbors < 2:
            raise InputError("config abod_neighbors must be >= 2")
        if self.workers < 1:
            raise InputError("config workers must be >= 1")
        if self.normalize_pool not in ("pooled", "baselines"):
            raise InputError("config normalize_pool must be 'pooled' or 'baselines'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides) -> "Config":
        updates = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **updates).validate()


def _field_names() -> set[str]:
    return {f.name for f in dataclasses.fields(Config)}


def config_from_dict(doc: dict) -> Config:
    unknown = set(doc) - _field_names()
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    if "detector_map" in doc:
        doc = dict(doc)
        doc["detector_map"] = {int(k): int(v) for k, v in doc["detector_map"].items()}
    return Config(**doc).validate()


def load_config(path: str | Path | None = None) -> Config:
    """Load from an explicit path, else $TRAFFICLENS_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return Config()
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"bad config JSON: {exc}") from exc
    return config_from_dict(doc)
