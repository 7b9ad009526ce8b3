"""Per-intersection descriptive metrics.

Works on journey fragments already clipped to an intersection mask:
stop events, turning movements and their O-D / travel-time matrices,
queue-length distributions, and severe-braking events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import geo
from .errors import InputError, UnclassifiableMovement
from .geo import PlanarPoint
from .ingest import Journey
from .masks import DIRECTIONS, OPPOSITE, Mask, angular_diff, bearing_of

G_MPS2 = 9.80665

STOP_SPEED_THRESHOLD = 1.0   # m/s; below this a sample counts as stopped
STOP_MIN_DURATION = 3.0      # s; one sampling interval, filters GPS jitter
QUEUE_MIN_STOP = 10.0        # s; stops longer than this mark a queue join
BRAKING_THRESHOLD_G = 0.47
BRAKING_SUSTAIN = 2.0        # s

#: Fragments must start/end within this distance of the mask boundary to
#: be classifiable (clipping puts crossings exactly on the boundary).
BOUNDARY_TOL_M = 1.0


@dataclass(frozen=True)
class StopEvent:
    journey_id: str
    t_start: float
    duration: float
    location: PlanarPoint
    approach: str | None = None


@dataclass(frozen=True)
class MovementRecord:
    journey_id: str
    origin: str
    dest: str
    travel_time: float


@dataclass(frozen=True)
class QueueDistribution:
    approach: str
    mu: float
    sigma: float
    n: int


@dataclass(frozen=True)
class BrakingEvent:
    journey_id: str
    t_start: float
    duration: float
    peak_decel: float  # m/s^2, negative
    location: PlanarPoint


def _positions(journey: Journey) -> list[PlanarPoint]:
    if all(s.xy is not None for s in journey.samples):
        return [s.xy for s in journey.samples]
    origin = journey.samples[0].pos
    return geo.project_to_local(origin, [s.pos for s in journey.samples])


def detect_stops(journey: Journey, speed_threshold: float = STOP_SPEED_THRESHOLD,
                 min_duration: float = STOP_MIN_DURATION) -> list[StopEvent]:
    """Find maximal below-threshold speed runs lasting at least ``min_duration``.

    A run is considered over at the first sample whose speed recovers
    above the threshold, so the duration covers the interval up to that
    sample (or to the journey's last sample when it never recovers).
    """
    samples = journey.samples
    if any(s.speed is None for s in samples):
        raise InputError(f"journey {journey.id}: stop detection needs speeds")
    pts = _positions(journey)
    stops = []
    i = 0
    n = len(samples)
    while i < n:
        if samples[i].speed < speed_threshold:
            j = i
            while j + 1 < n and samples[j + 1].speed < speed_threshold:
                j += 1
            end_t = samples[j + 1].t if j + 1 < n else samples[j].t
            duration = end_t - samples[i].t
            if duration >= min_duration:
                stops.append(StopEvent(journey_id=journey.id, t_start=samples[i].t,
                                       duration=duration, location=pts[i]))
            i = j + 1
        else:
            i += 1
    return stops


def _travel_bearing(p0: PlanarPoint, p1: PlanarPoint) -> float:
    dx, dy = p1.x - p0.x, p1.y - p0.y
    norm = math.hypot(dx, dy)
    if norm <= 1e-9:
        raise UnclassifiableMovement("coincident samples at fragment end")
    return bearing_of(dx / norm, dy / norm)


def classify_movement(fragment: Journey, mask: Mask) -> MovementRecord:
    """Assign origin/destination approach labels to a clipped fragment.

    Labels follow the direction of travel: the origin is the approach
    whose inbound bearing best matches the entry heading, and the
    destination is the compass direction the vehicle leaves in (matched
    through the exit zone's outbound bearing), so a straight pass lands
    on the matrix diagonal.  Fragments that start or end strictly inside
    the mask (mid-mask GPS starts) are unclassifiable.
    """
    if not mask.approaches:
        raise InputError(f"mask {mask.id} has no approaches")
    pts = _positions(fragment)
    boundary = mask.geometry.to_shapely().exterior
    from shapely.geometry import Point as _ShPoint
    if boundary.distance(_ShPoint(pts[0].x, pts[0].y)) > BOUNDARY_TOL_M:
        raise UnclassifiableMovement(
            f"{fragment.id}: fragment starts inside the mask")
    if boundary.distance(_ShPoint(pts[-1].x, pts[-1].y)) > BOUNDARY_TOL_M:
        raise UnclassifiableMovement(
            f"{fragment.id}: fragment ends inside the mask")
    entry_bearing = _travel_bearing(pts[0], pts[1])
    exit_bearing = _travel_bearing(pts[-2], pts[-1])
    origin_zone = min(mask.approaches,
                      key=lambda a: angular_diff(entry_bearing, a.entry_bearing))
    exit_zone = min(mask.approaches,
                    key=lambda a: angular_diff(exit_bearing, a.entry_bearing + 180.0))
    return MovementRecord(journey_id=fragment.id,
                          origin=origin_zone.direction,
                          dest=OPPOSITE[exit_zone.direction],
                          travel_time=fragment.t_last - fragment.t_first)


def movements_for_mask(fragments: Iterable[Journey], mask: Mask
                       ) -> tuple[list[MovementRecord], list[dict]]:
    records, unclassified = [], []
    for frag in fragments:
        try:
            records.append(classify_movement(frag, mask))
        except UnclassifiableMovement as exc:
            unclassified.append({"journey_id": frag.id, "part": frag.part,
                                 "reason": str(exc)})
    return records, unclassified


def od_matrix(records: Iterable[MovementRecord]) -> dict[tuple[str, str], int]:
    counts = {(o, d): 0 for o in DIRECTIONS for d in DIRECTIONS}
    for r in records:
        counts[(r.origin, r.dest)] += 1
    return counts


def travel_time_matrix(records: Iterable[MovementRecord]) -> dict[tuple[str, str], float]:
    """Mean travel time per (origin, dest); cells with no data are absent."""
    sums: dict[tuple[str, str], list[float]] = {}
    for r in records:
        sums.setdefault((r.origin, r.dest), []).append(r.travel_time)
    return {cell: sum(v) / len(v) for cell, v in sums.items()}


def assign_stop_approach(stop: StopEvent, mask: Mask) -> str | None:
    """Positional fallback: match the stop location's bearing from the
    center against the approach zones' sides (inbound bearing + 180)."""
    if not mask.approaches or mask.center is None:
        return None
    dx, dy = stop.location.x - mask.center.x, stop.location.y - mask.center.y
    if math.hypot(dx, dy) <= 1e-9:
        return None
    b = bearing_of(dx, dy)
    best = min(mask.approaches,
               key=lambda a: angular_diff(b, a.entry_bearing + 180.0))
    if angular_diff(b, best.entry_bearing + 180.0) > 45.0 + 1e-9:
        return None
    return best.direction


def queue_distributions(stops: Iterable[StopEvent], mask: Mask,
                        min_stop: float = QUEUE_MIN_STOP
                        ) -> tuple[list[QueueDistribution], int]:
    """Fit per-approach normal(mu, sigma) to queue-join distances.

    Only stops strictly longer than ``min_stop`` count; the distance is
    straight-line from the stop location to the approach's stop-bar
    reference.  Returns the fits plus the number of stops that could not
    be assigned to any approach.
    """
    by_approach: dict[str, list[float]] = {}
    unassigned = 0
    zones = {a.direction: a for a in mask.approaches}
    for stop in stops:
        if stop.duration <= min_stop:
            continue
        label = stop.approach or assign_stop_approach(stop, mask)
        if label is None or label not in zones:
            unassigned += 1
            continue
        dist = stop.location.distance_to(zones[label].stop_bar)
        by_approach.setdefault(label, []).append(dist)
    out = []
    for label in DIRECTIONS:
        if label not in by_approach:
            continue
        d = np.array(by_approach[label])
        mu = float(d.mean())
        sigma = float(d.std(ddof=1)) if len(d) > 1 else 0.0
        out.append(QueueDistribution(approach=label, mu=mu, sigma=sigma, n=len(d)))
    return out, unassigned


def detect_braking(journey: Journey, threshold_g: float = BRAKING_THRESHOLD_G,
                   sustain: float = BRAKING_SUSTAIN) -> list[BrakingEvent]:
    """Maximal windows of consecutive segments all decelerating at or
    below -threshold_g, spanning at least ``sustain`` seconds."""
    samples = journey.samples
    if any(s.speed is None for s in samples):
        raise InputError(f"journey {journey.id}: braking detection needs speeds")
    limit = -threshold_g * G_MPS2
    pts = _positions(journey)
    ts = [s.t for s in samples]
    accel = [(samples[i + 1].speed - samples[i].speed) / (ts[i + 1] - ts[i])
             for i in range(len(samples) - 1)]
    events = []
    i = 0
    while i < len(accel):
        if accel[i] <= limit:
            j = i
            while j + 1 < len(accel) and accel[j + 1] <= limit:
                j += 1
            span = ts[j + 1] - ts[i]
            if span >= sustain:
                events.append(BrakingEvent(
                    journey_id=journey.id, t_start=ts[i], duration=span,
                    peak_decel=min(accel[i:j + 1]), location=pts[i]))
            i = j + 1
        else:
            i += 1
    return events


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")


def _matrix_rows(matrix: dict, fmt=lambda v: v):
    for o in DIRECTIONS:
        yield [o] + [fmt(matrix[(o, d)]) if (o, d) in matrix else None
                     for d in DIRECTIONS]


def svg_histogram(values: Sequence[float], path: Path, title: str,
                  bins: int = 20) -> None:
    """Tiny dependency-free SVG bar histogram (deterministic bytes)."""
    width, height, pad = 480, 280, 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width // 2}" y="16" text-anchor="middle" '
             f'font-family="sans-serif" font-size="13">{title}</text>']
    if values:
        counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
        top = max(int(counts.max()), 1)
        bw = (width - 2 * pad) / bins
        for i, c in enumerate(counts):
            h = (height - 2 * pad) * c / top
            x = pad + i * bw
            parts.append(f'<rect x="{x:.2f}" y="{height - pad - h:.2f}" '
                         f'width="{bw:.2f}" height="{h:.2f}" fill="#4878a8"/>')
        parts.append(f'<text x="{pad}" y="{height - 12}" font-family="sans-serif" '
                     f'font-size="11">{edges[0]:.1f}</text>')
        parts.append(f'<text x="{width - pad}" y="{height - 12}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{edges[-1]:.1f}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def report_bundle(fragments: Sequence[Journey], mask: Mask,
                  intersection_id: str, window: tuple[float, float],
                  out_dir: str | Path, config: dict | None = None,
                  include_gapped: bool = True, plots: bool = False,
                  stop_speed_threshold: float = STOP_SPEED_THRESHOLD,
                  stop_min_duration: float = STOP_MIN_DURATION,
                  queue_min_stop: float = QUEUE_MIN_STOP,
                  braking_threshold_g: float = BRAKING_THRESHOLD_G,
                  braking_sustain: float = BRAKING_SUSTAIN) -> dict:
    """Compute all metrics for one (intersection, window) and write the
    CSV/JSON bundle.  Returns the report dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    frags = [f for f in fragments if include_gapped or not f.gapped]
    records, unclassified = movements_for_mask(frags, mask)
    origin_by_journey = {(r.journey_id): r.origin for r in records}

    stops: list[StopEvent] = []
    braking: list[BrakingEvent] = []
    for f in frags:
        approach = origin_by_journey.get(f.id)
        for s in detect_stops(f, stop_speed_threshold, stop_min_duration):
            stops.append(replace(s, approach=approach) if approach else s)
        braking.extend(detect_braking(f, braking_threshold_g, braking_sustain))

    od = od_matrix(records)
    tt = travel_time_matrix(records)
    queues, unassigned_stops = queue_distributions(stops, mask, queue_min_stop)

    _write_csv(out / "stops.csv",
               ["journey_id", "t_start", "duration", "x", "y", "approach"],
               [(s.journey_id, s.t_start, s.duration, s.location.x, s.location.y,
                 s.approach) for s in stops])
    _write_csv(out / "od.csv", ["origin"] + list(DIRECTIONS), _matrix_rows(od))
    _write_csv(out / "tt.csv", ["origin"] + list(DIRECTIONS), _matrix_rows(tt))
    _write_csv(out / "queues.csv", ["approach", "mu", "sigma", "n"],
               [(q.approach, q.mu, q.sigma, q.n) for q in queues])
    _write_csv(out / "braking.csv",
               ["journey_id", "t_start", "duration", "peak_decel", "x", "y"],
               [(b.journey_id, b.t_start, b.duration, b.peak_decel,
                 b.location.x, b.location.y) for b in braking])

    report = {
        "intersection": intersection_id,
        "window": list(window),
        "empty": len(frags) == 0,
        "n_fragments": len(frags),
        "n_movements": len(records),
        "n_unclassified": len(unclassified),
        "n_stops": len(stops),
        "n_unassigned_queue_stops": unassigned_stops,
        "n_braking_events": len(braking),
        "od": {f"{o}->{d}": c for (o, d), c in sorted(od.items())},
        "travel_time_mean": {f"{o}->{d}": v for (o, d), v in sorted(tt.items())},
        "queues": [{"approach": q.approach, "mu": q.mu, "sigma": q.sigma, "n": q.n}
                   for q in queues],
        "config": config or {},
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

    if plots:
        svg_histogram([s.duration for s in stops], out / "stop_durations.svg",
                      "Stop durations (s)")
        zones = {a.direction: a for a in mask.approaches}
        dists = [s.location.distance_to(zones[s.approach].stop_bar)
                 for s in stops
                 if s.duration > queue_min_stop and s.approach in zones]
        svg_histogram(dists, out / "queue_distances.svg",
                      "Queue-join distance from stop bar (m)")
    return report
