"""Traffic-interruption detection.

Two detectors: an angle-based outlier scorer over per-journey feature
vectors (contextualized by the same hour one and two weeks prior), and a
phase-volume comparator over controller-log counts against the same
weekly baselines.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import analytics
from .errors import InputError
from .ingest import Journey, PhaseVolumeTable

FEATURES = ("stopped_time", "avg_speed", "speed_std", "travel_time")

COHORTS = ("current", "week_minus_1", "week_minus_2")

ABOD_NEIGHBORS = 10
CONTAMINATION = 0.1
ATSPM_THRESHOLD = 0.4


@dataclass(frozen=True)
class FeatureVector:
    journey_id: str
    stopped_time: float
    avg_speed: float
    speed_std: float
    travel_time: float
    cohort: str = "current"

    def values(self, features: Sequence[str] = FEATURES) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in features)


@dataclass(frozen=True)
class OutlierScore:
    journey_id: str
    abof: float
    flagged: bool = False


@dataclass(frozen=True)
class PhaseDeviation:
    intersection_id: str
    phase: int
    hour: float
    current: int
    baseline_mean: float
    score: float
    flagged: bool


def featurize(fragment: Journey, cohort: str = "current") -> FeatureVector:
    """Summarize a clipped fragment as (stopped time, mean speed, speed
    std, travel time).  Speed statistics are over samples (population
    std); stopped time sums the stop-detector's run durations."""
    if len(fragment.samples) < 2:
        raise InputError(f"fragment {fragment.id}: needs at least 2 samples")
    if cohort not in COHORTS:
        raise InputError(f"unknown cohort {cohort!r}")
    speeds = np.array([s.speed for s in fragment.samples], dtype=float)
    if np.isnan(speeds).any():
        raise InputError(f"fragment {fragment.id}: featurize needs speeds")
    stops = analytics.detect_stops(fragment)
    return FeatureVector(
        journey_id=fragment.id,
        stopped_time=float(sum(s.duration for s in stops)),
        avg_speed=float(speeds.mean()),
        speed_std=float(speeds.std()),
        travel_time=fragment.t_last - fragment.t_first,
        cohort=cohort)


def normalize(vectors: Sequence[FeatureVector],
              features: Sequence[str] = FEATURES,
              pool: str = "pooled") -> np.ndarray:
    """Z-score the feature matrix.

    ``pool="pooled"`` computes the statistics over all cohorts together;
    ``pool="baselines"`` uses only the baseline cohorts (falling back to
    pooled when there are none).  Zero-variance features map to 0.
    """
    if len(vectors) < 2:
        raise InputError("normalize needs at least 2 vectors")
    X = np.array([v.values(features) for v in vectors], dtype=float)
    if pool == "baselines":
        ref = np.array([v.values(features) for v in vectors
                        if v.cohort != "current"], dtype=float)
        if len(ref) < 2:
            ref = X
    elif pool == "pooled":
        ref = X
    else:
        raise InputError(f"unknown normalization pool {pool!r}")
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)  # population std
    out = np.zeros_like(X)
    nz = std > 0
    out[:, nz] = (X[:, nz] - mean[nz]) / std[nz]
    return out


def _abof_one(diffs: np.ndarray) -> float:
    """Weighted angle variance over all unordered neighbor pairs.

    ``diffs`` holds the difference vectors from the query point to its
    neighbors; pairs involving a zero-length difference are skipped.
    """
    norms = np.linalg.norm(diffs, axis=1)
    keep = norms > 0
    diffs, norms = diffs[keep], norms[keep]
    k = len(diffs)
    if k < 2:
        raise InputError("all neighbor pairs degenerate (duplicate points)")
    dots = diffs @ diffs.T
    n2 = norms * norms
    iu, ju = np.triu_indices(k, 1)
    v = dots[iu, ju] / (n2[iu] * n2[ju])
    w = 1.0 / (norms[iu] * norms[ju])
    wsum = w.sum()
    vbar = (w * v).sum() / wsum
    return float((w * (v - vbar) ** 2).sum() / wsum)


def abof_scores(points: np.ndarray, ids: Sequence[str] | None = None,
                k: int = ABOD_NEIGHBORS) -> list[OutlierScore]:
    """Fast angle-based outlier factors over the k nearest neighbors.

    For each point the difference vectors to its k Euclidean nearest
    neighbors are compared pairwise: value <AB,AC>/(|AB|^2 |AC|^2) with
    weight 1/(|AB| |AC|); the score is the weighted variance of the
    values.  Lower scores are more outlying.  With k = n-1 this equals
    the full quadratic-time formulation.
    """
    X = np.asarray(points, dtype=float)
    n = len(X)
    if n < 3:
        raise InputError("abof_scores needs at least 3 points")
    if k < 2:
        raise InputError("k must be >= 2")
    if k > n - 1:
        warnings.warn(f"k={k} clamped to n-1={n - 1}")
        k = n - 1
    if ids is None:
        ids = [str(i) for i in range(n)]
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    scores = []
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        nb = [j for j in order if j != i][:k]
        scores.append(OutlierScore(journey_id=ids[i],
                                   abof=_abof_one(X[nb] - X[i])))
    return scores


def flag_outliers(scores: Sequence[OutlierScore], contamination: float = CONTAMINATION,
                  cohorts: Sequence[str] | None = None) -> list[OutlierScore]:
    """Flag the floor(contamination * n_current) lowest-scoring points.

    Only current-cohort points are eligible; the baselines just provide
    context.  Ties at the cutoff break by journey_id ascending.
    """
    if not 0 < contamination < 0.5:
        raise InputError("contamination must be in (0, 0.5)")
    if cohorts is not None and len(cohorts) != len(scores):
        raise InputError("cohorts must align with scores")
    eligible = [i for i in range(len(scores))
                if cohorts is None or cohorts[i] == "current"]
    m = math.floor(contamination * len(eligible))
    ranked = sorted(eligible, key=lambda i: (scores[i].abof, scores[i].journey_id))
    flag_set = set(ranked[:m])
    return [replace(s, flagged=(i in flag_set)) for i, s in enumerate(scores)]


def atspm_interruption(current: PhaseVolumeTable,
                       baselines: Sequence[PhaseVolumeTable],
                       threshold: float = ATSPM_THRESHOLD
                       ) -> tuple[list[PhaseDeviation], list[tuple[int, float]]]:
    """Compare per-(phase, hour) volumes against the weekly baselines.

    Baseline bins are aligned by subtracting whole weeks from their bin
    starts.  score = (current - baseline_mean) / max(1, baseline_mean);
    |score| >= threshold flags the bin.  Bins seen now but absent from
    every baseline are returned separately as "no-baseline".
    """
    if any(b.bin_s != current.bin_s for b in baselines):
        raise InputError("tables must be binned identically")

    def aligned(table: PhaseVolumeTable) -> dict[tuple[int, float], int]:
        # Shift each baseline onto the current week's bin starts.
        if not table.counts:
            return {}
        ref = min(h for _, h in current.counts) if current.counts else \
            min(h for _, h in table.counts)
        base = min(h for _, h in table.counts)
        weeks = round((ref - base) / 604800.0)
        shift = weeks * 604800.0
        return {(p, h + shift): c for (p, h), c in table.counts.items()}

    base_maps = [aligned(b) for b in baselines]
    keys = set(current.counts)
    for m in base_maps:
        keys.update(m)
    deviations, no_baseline = [], []
    for key in sorted(keys):
        phase, hour = key
        cur = current.counts.get(key, 0)
        vals = [m[key] for m in base_maps if key in m]
        if not vals:
            no_baseline.append(key)
            continue
        bm = sum(vals) / len(vals)
        score = (cur - bm) / max(1.0, bm)
        deviations.append(PhaseDeviation(
            intersection_id=current.intersection_id, phase=phase, hour=hour,
            current=cur, baseline_mean=bm, score=score,
            flagged=abs(score) >= threshold))
    return deviations, no_baseline
