"""Trajectory and controller-log ingestion.

Input formats are CSV or newline-delimited JSON with these columns/keys:

    trajectories: journey_id, timestamp, lat, lon, speed_mps, ignition
    controller events (ATSPM): intersection_id, timestamp, event_code, parameter

Timestamps are epoch seconds (float).  Rows that fail to parse are routed
to a rejects report instead of aborting the load; a missing file is fatal.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import geo
from .errors import InputError
from .geo import GeoPoint, PlanarPoint
from .masks import MaskSet

#: Hi-res controller event code for a detector actuation (on), overridable.
DETECTOR_ON = 82

#: Journeys with any inter-sample gap above this are flagged "gapped"
#: (vendor privacy masking); they are kept but can be excluded downstream.
GAP_FLAG_S = 30.0

MIN_DURATION_S = 120.0
MIN_CLIP_LENGTH_M = 150.0


@dataclass(frozen=True)
class TrajectorySample:
    journey_id: str
    t: float
    pos: GeoPoint
    speed: float | None = None
    ignition: str = "unknown"  # on | off | unknown
    xy: PlanarPoint | None = None

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise InputError("sample timestamp must be finite")
        if self.speed is not None and self.speed < 0:
            raise InputError("speed must be >= 0")


@dataclass(frozen=True)
class Journey:
    """A time-ordered sequence of samples for one vehicle trip.

    ``part`` is the clip fragment index (0 for raw journeys); clipped
    fragments also carry the id of the mask they were cut to.
    """

    id: str
    samples: tuple[TrajectorySample, ...]
    part: int = 0
    mask_id: str | None = None

    def __post_init__(self):
        if len(self.samples) < 2:
            raise InputError(f"journey {self.id}: needs at least 2 samples")
        for a, b in zip(self.samples, self.samples[1:]):
            if not b.t > a.t:
                raise InputError(f"journey {self.id}: samples not strictly increasing in t")
        if any(s.journey_id != self.id for s in self.samples):
            raise InputError(f"journey {self.id}: sample journey_id mismatch")

    @property
    def t_first(self) -> float:
        return self.samples[0].t

    @property
    def t_last(self) -> float:
        return self.samples[-1].t

    @property
    def duration(self) -> float:
        return self.t_last - self.t_first

    @property
    def gapped(self) -> bool:
        return any(b.t - a.t > GAP_FLAG_S
                   for a, b in zip(self.samples, self.samples[1:]))

    def path_length_m(self) -> float:
        """Sum of straight-line hops, in the local plane when projected."""
        total = 0.0
        if all(s.xy is not None for s in self.samples):
            for a, b in zip(self.samples, self.samples[1:]):
                total += a.xy.distance_to(b.xy)
            return total
        origin = self.samples[0].pos
        pts = geo.project_to_local(origin, [s.pos for s in self.samples])
        for a, b in zip(pts, pts[1:]):
            total += a.distance_to(b)
        return total


@dataclass(frozen=True)
class AtspmEvent:
    intersection_id: str
    t: float
    event_code: int
    parameter: int

    def __post_init__(self):
        if self.event_code < 0 or self.parameter < 0:
            raise InputError("event_code and parameter must be >= 0")


@dataclass
class IngestResult:
    journeys: list[Journey]
    rejects: list[dict] = field(default_factory=list)


@dataclass
class AtspmResult:
    events: list[AtspmEvent]
    rejects: list[dict] = field(default_factory=list)


def _iter_rows(path: Path):
    """Yield (raw_row, dict) pairs from a CSV or NDJSON file."""
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                yield row, row
    else:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield line, json.loads(line)
                except json.JSONDecodeError:
                    yield line, None


def _parse_trajectory_row(rec: Mapping) -> TrajectorySample:
    jid = str(rec["journey_id"])
    t = float(rec["timestamp"])
    lat = float(rec["lat"])
    lon = float(rec["lon"])
    raw_speed = rec.get("speed_mps")
    speed = None if raw_speed in (None, "") else float(raw_speed)
    ignition = str(rec.get("ignition") or "unknown").lower()
    if ignition not in ("on", "off", "unknown"):
        raise InputError(f"bad ignition value {ignition!r}")
    return TrajectorySample(journey_id=jid, t=t, pos=GeoPoint(lon, lat),
                            speed=speed, ignition=ignition)


def _fill_speeds(samples: list[TrajectorySample]) -> list[TrajectorySample]:
    """Fill missing speeds from segment distance / dt (assigned to the
    later sample); the first sample inherits the second's speed."""
    if all(s.speed is not None for s in samples):
        return samples
    origin = samples[0].pos
    pts = geo.project_to_local(origin, [s.pos for s in samples])
    out = list(samples)
    for i in range(1, len(out)):
        if out[i].speed is None:
            dt = out[i].t - out[i - 1].t
            d = pts[i].distance_to(pts[i - 1])
            out[i] = replace(out[i], speed=d / dt if dt > 0 else 0.0)
    if out[0].speed is None:
        out[0] = replace(out[0], speed=out[1].speed)
    return out


def load_trajectories(paths: Sequence[str | Path]) -> IngestResult:
    """Load, group, sort, and deduplicate trajectory rows into journeys.

    Duplicate (journey_id, timestamp) rows keep the first occurrence.
    Unparseable rows and single-sample journeys go to the rejects list.
    """
    rejects: list[dict] = []
    by_journey: dict[str, list[TrajectorySample]] = {}
    for p in paths:
        path = Path(p)
        if not path.exists():
            raise InputError(f"trajectory file not found: {path}")
        for raw, rec in _iter_rows(path):
            if rec is None:
                rejects.append({"row": str(raw), "reason": "unparseable JSON",
                                "file": str(path)})
                continue
            try:
                sample = _parse_trajectory_row(rec)
            except (KeyError, ValueError, TypeError, InputError) as exc:
                rejects.append({"row": str(raw), "reason": str(exc), "file": str(path)})
                continue
            by_journey.setdefault(sample.journey_id, []).append(sample)

    journeys = []
    for jid in sorted(by_journey):
        samples = sorted(by_journey[jid], key=lambda s: s.t)  # stable: first wins
        dedup = [samples[0]]
        for s in samples[1:]:
            if s.t != dedup[-1].t:
                dedup.append(s)
        if len(dedup) < 2:
            rejects.append({"row": jid, "reason": "single-sample journey"})
            continue
        journeys.append(Journey(id=jid, samples=tuple(_fill_speeds(dedup))))
    return IngestResult(journeys=journeys, rejects=rejects)


def filter_journeys(journeys: Iterable[Journey],
                    min_duration: float = MIN_DURATION_S) -> list[Journey]:
    """Drop ignition-off samples, then journeys shorter than ``min_duration``."""
    out = []
    for j in journeys:
        kept = tuple(s for s in j.samples if s.ignition != "off")
        if len(kept) < 2:
            continue
        if kept[-1].t - kept[0].t < min_duration:
            continue
        out.append(j if kept == j.samples else replace(j, samples=kept))
    return out


def clip_to_masks(journeys: Iterable[Journey], mask_set: MaskSet,
                  min_length: float = MIN_CLIP_LENGTH_M) -> list[Journey]:
    """Clip each journey to every mask; keep fragments of sufficient length.

    Fragments carry planar positions in the mask set's projection and are
    tagged with the mask id they were cut to.
    """
    fragments = []
    for j in journeys:
        planar = geo.project_to_local(mask_set.origin, [s.pos for s in j.samples])
        projected = replace(j, samples=tuple(
            replace(s, xy=p) for s, p in zip(j.samples, planar)))
        for mask in mask_set.masks:
            for frag in geo.clip_journey(projected, mask.geometry):
                if frag.path_length_m() < min_length:
                    continue
                fragments.append(replace(frag, mask_id=mask.id))
    return fragments


def load_atspm(paths: Sequence[str | Path], intersection_id: str,
               t_range: tuple[float, float]) -> AtspmResult:
    """Events for one intersection within [start, end), sorted by time."""
    start, end = t_range
    if not start < end:
        raise InputError("t_range start must be before end")
    rejects: list[dict] = []
    events: list[AtspmEvent] = []
    for p in paths:
        path = Path(p)
        if not path.exists():
            raise InputError(f"ATSPM file not found: {path}")
        for raw, rec in _iter_rows(path):
            if rec is None:
                rejects.append({"row": str(raw), "reason": "unparseable JSON",
                                "file": str(path)})
                continue
            try:
                ev = AtspmEvent(intersection_id=str(rec["intersection_id"]),
                                t=float(rec["timestamp"]),
                                event_code=int(rec["event_code"]),
                                parameter=int(rec["parameter"]))
            except (KeyError, ValueError, TypeError, InputError) as exc:
                rejects.append({"row": str(raw), "reason": str(exc), "file": str(path)})
                continue
            if ev.intersection_id == intersection_id and start <= ev.t < end:
                events.append(ev)
    events.sort(key=lambda e: e.t)
    return AtspmResult(events=events, rejects=rejects)


@dataclass
class PhaseVolumeTable:
    """Detector-actuation counts per (phase, bin start)."""

    intersection_id: str
    bin_s: float
    counts: dict[tuple[int, float], int] = field(default_factory=dict)
    unmapped: dict[float, int] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.counts.values()) + sum(self.unmapped.values())


def phase_volumes(events: Sequence[AtspmEvent], detector_map: Mapping[int, int],
                  bin_s: float = 3600.0,
                  detector_on_code: int = DETECTOR_ON) -> PhaseVolumeTable:
    """Bin detector-on events into per-phase counts.

    ``detector_map`` maps detector parameter to signal phase; actuations
    of unmapped detectors are tallied separately so totals still add up.
    """
    if not detector_map:
        raise InputError("detector_map must not be empty")
    iid = events[0].intersection_id if events else ""
    table = PhaseVolumeTable(intersection_id=iid, bin_s=bin_s)
    for ev in events:
        if ev.event_code != detector_on_code:
            continue
        bin_start = math.floor(ev.t / bin_s) * bin_s
        phase = detector_map.get(ev.parameter)
        if phase is None:
            table.unmapped[bin_start] = table.unmapped.get(bin_start, 0) + 1
        else:
            key = (phase, bin_start)
            table.counts[key] = table.counts.get(key, 0) + 1
    return table


def convert_columnar_export(path):
    """Placeholder for the vendor's columnar (Parquet-style) export.

    Not implemented here; feeds live in CSV/NDJSON.  The column mapping a
    converter must produce:

        journey_id  <- trip/journey identifier (string)
        timestamp   <- capture time as epoch seconds (float, ms precision)
        lat, lon    <- WGS84 degrees
        speed_mps   <- instantaneous speed in m/s (blank if absent)
        ignition    <- "on" | "off" | "unknown"
    """
    raise NotImplementedError(
        "columnar vendor exports are out of scope; convert to the CSV/NDJSON "
        "schema documented here")


def write_rejects(path: str | Path, rejects: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in rejects:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Journey store: date=YYYY-MM-DD/hour=HH/ partitions, one file per intersection
# ---------------------------------------------------------------------------

def _journey_record(j: Journey) -> dict:
    return {
        "id": j.id, "part": j.part, "mask_id": j.mask_id,
        "samples": [
            {"t": s.t, "lon": s.pos.lon, "lat": s.pos.lat, "speed": s.speed,
             "ignition": s.ignition,
             "x": None if s.xy is None else s.xy.x,
             "y": None if s.xy is None else s.xy.y}
            for s in j.samples],
    }


def _journey_from_record(rec: dict) -> Journey:
    samples = tuple(
        TrajectorySample(
            journey_id=rec["id"], t=s["t"], pos=GeoPoint(s["lon"], s["lat"]),
            speed=s["speed"], ignition=s["ignition"],
            xy=None if s["x"] is None else PlanarPoint(s["x"], s["y"]))
        for s in rec["samples"])
    return Journey(id=rec["id"], samples=samples, part=rec["part"],
                   mask_id=rec["mask_id"])


def _partition_of(t: float) -> tuple[str, int]:
    dt = datetime.fromtimestamp(t, tz=timezone.utc)
    return dt.strftime("%Y-%m-%d"), dt.hour


class JourneyStore:
    """Directory-partitioned journey storage.

    Layout: root/date=YYYY-MM-DD/hour=HH/<intersection>.ndjson, where the
    partition comes from a journey's first sample (UTC) and the file name
    from its mask id (un-clipped journeys go to ``_all``).  Re-storing a
    journey with the same (id, part, mask) key overwrites it.
    """

    UNCLIPPED = "_all"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _file_for(self, date: str, hour: int, intersection: str) -> Path:
        return self.root / f"date={date}" / f"hour={hour:02d}" / f"{intersection}.ndjson"

    def put(self, journeys: Iterable[Journey]) -> int:
        groups: dict[Path, list[Journey]] = {}
        for j in journeys:
            date, hour = _partition_of(j.t_first)
            key = j.mask_id or self.UNCLIPPED
            groups.setdefault(self._file_for(date, hour, key), []).append(j)
        n = 0
        for path, js in groups.items():
            existing: dict[tuple, dict] = {}
            if path.exists():
                with open(path) as fh:
                    for line in fh:
                        rec = json.loads(line)
                        existing[(rec["id"], rec["part"], rec["mask_id"])] = rec
            for j in js:
                existing[(j.id, j.part, j.mask_id)] = _journey_record(j)
                n += 1
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w") as fh:
                for key in sorted(existing, key=lambda k: (k[0], k[1], k[2] or "")):
                    fh.write(json.dumps(existing[key], sort_keys=True) + "\n")
        self._write_manifest()
        return n

    def get(self, date: str, hour: int, intersection: str | None = None) -> list[Journey]:
        hour_dir = self.root / f"date={date}" / f"hour={hour:02d}"
        if not hour_dir.is_dir():
            return []
        files = [hour_dir / f"{intersection}.ndjson"] if intersection else \
            sorted(hour_dir.glob("*.ndjson"))
        out = []
        for path in files:
            if not path.exists():
                continue
            with open(path) as fh:
                for line in fh:
                    out.append(_journey_from_record(json.loads(line)))
        return out

    def load_window(self, start: float, end: float,
                    intersection: str | None = None) -> list[Journey]:
        """Journeys whose first sample falls in [start, end)."""
        out = []
        t = math.floor(start / 3600.0) * 3600.0
        while t < end:
            date, hour = _partition_of(t)
            for j in self.get(date, hour, intersection):
                if start <= j.t_first < end:
                    out.append(j)
            t += 3600.0
        out.sort(key=lambda j: (j.id, j.part, j.mask_id or ""))
        return out

    def _write_manifest(self) -> None:
        partitions = []
        for path in sorted(self.root.glob("date=*/hour=*/*.ndjson")):
            with open(path) as fh:
                count = sum(1 for _ in fh)
            date = path.parent.parent.name.split("=", 1)[1]
            hour = int(path.parent.name.split("=", 1)[1])
            partitions.append({"date": date, "hour": hour,
                               "intersection": path.stem, "count": count,
                               "path": str(path.relative_to(self.root))})
        manifest = {"partitions": partitions,
                    "total": sum(p["count"] for p in partitions)}
        with open(self.root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
