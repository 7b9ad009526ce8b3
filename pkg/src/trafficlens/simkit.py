"""Demand calibration and simulation backends.

The built-in "toy" backend is a deterministic queue-discharge model:
vehicles traverse links at free speed times their speed factor, join a
FIFO queue per turning movement at each stop bar, and discharge during
green at a fixed saturation headway after a startup loss at each green
onset.  It exists so sweeps, metrics, and the orchestration contract can
be exercised at desk scale; car-following physics belongs to the
external-process backend.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from heapq import heappop, heappush
from pathlib import Path
from string import Template
from typing import Mapping, Sequence

import numpy as np

from .errors import BackendError, InputError
from .signal import SignalTimeline, green_window

SATURATION_HEADWAY = 2.0   # s per vehicle while discharging
STARTUP_LOST_TIME = 2.0    # s after each green onset before first discharge

SPEED_FACTOR_MIN = 0.5
SPEED_FACTOR_MAX = 2.0


@dataclass(frozen=True)
class SpeedFactorModel:
    """Normal model of desired-speed / speed-limit ratios."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.mean > 0 or self.std < 0:
            raise InputError("speed factor model needs mean > 0 and std >= 0")


def fit_speed_factor(max_speeds: Sequence[float], speed_limit: float) -> SpeedFactorModel:
    """Fit mean/std of observed max-speed to speed-limit ratios.

    Sample standard deviation (n-1 denominator; 0 for one observation).
    """
    if not speed_limit > 0:
        raise InputError("speed_limit must be positive")
    if len(max_speeds) == 0:
        raise InputError("no observations")
    r = np.asarray(max_speeds, dtype=float) / speed_limit
    std = float(r.std(ddof=1)) if len(r) > 1 else 0.0
    return SpeedFactorModel(mean=float(r.mean()), std=std)


@dataclass(frozen=True)
class Link:
    id: str
    frm: str
    to: str
    length: float
    free_speed: float
    left_turn_buffer_capacity: int | None = None

    def __post_init__(self):
        if not self.length > 0 or not self.free_speed > 0:
            raise InputError(f"link {self.id}: length and free_speed must be positive")


@dataclass(frozen=True)
class Movement:
    id: str
    intersection: str
    in_link: str
    out_link: str
    phase: int
    kind: str  # left | through | right
    approach: str  # NB | EB | SB | WB


@dataclass(frozen=True)
class Network:
    intersections: tuple[str, ...]
    links: Mapping[str, Link]
    movements: Mapping[str, Movement]
    routes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for m in self.movements.values():
            if m.in_link not in self.links or m.out_link not in self.links:
                raise InputError(f"movement {m.id} references unknown links")
            if m.intersection not in self.intersections:
                raise InputError(f"movement {m.id} references unknown intersection")
        for rid, moves in self.routes.items():
            self._check_route(rid, moves)

    def _check_route(self, rid: str, moves: Sequence[str]):
        for mid in moves:
            if mid not in self.movements:
                raise InputError(f"route {rid}: unknown movement {mid}")
        for a, b in zip(moves, moves[1:]):
            if self.movements[a].out_link != self.movements[b].in_link:
                raise InputError(f"route {rid}: movements {a} -> {b} not connected")

    def route_movements(self, route_id: str) -> list[Movement]:
        """Resolve a route id (or bare movement id) to its movement list."""
        if route_id in self.routes:
            return [self.movements[mid] for mid in self.routes[route_id]]
        if route_id in self.movements:
            return [self.movements[route_id]]
        raise InputError(f"unknown route or movement: {route_id}")


def network_to_json(net: Network) -> dict:
    return {
        "intersections": list(net.intersections),
        "links": [{"id": l.id, "from": l.frm, "to": l.to, "length": l.length,
                   "free_speed": l.free_speed,
                   "left_turn_buffer_capacity": l.left_turn_buffer_capacity}
                  for l in net.links.values()],
        "movements": [{"id": m.id, "intersection": m.intersection,
                       "in_link": m.in_link, "out_link": m.out_link,
                       "phase": m.phase, "kind": m.kind, "approach": m.approach}
                      for m in net.movements.values()],
        "routes": {rid: list(moves) for rid, moves in net.routes.items()},
    }


def network_from_json(doc: dict) -> Network:
    try:
        links = {l["id"]: Link(id=l["id"], frm=l["from"], to=l["to"],
                               length=float(l["length"]),
                               free_speed=float(l["free_speed"]),
                               left_turn_buffer_capacity=l.get("left_turn_buffer_capacity"))
                 for l in doc["links"]}
        movements = {m["id"]: Movement(id=m["id"], intersection=m["intersection"],
                                       in_link=m["in_link"], out_link=m["out_link"],
                                       phase=int(m["phase"]), kind=m["kind"],
                                       approach=m["approach"])
                     for m in doc["movements"]}
        routes = {rid: tuple(moves) for rid, moves in (doc.get("routes") or {}).items()}
        return Network(intersections=tuple(doc["intersections"]), links=links,
                       movements=movements, routes=routes)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad network document: {exc}") from exc


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    depart: float
    route: tuple[str, ...]
    speed_factor: float = 1.0

    def __post_init__(self):
        if not self.speed_factor > 0:
            raise InputError(f"vehicle {self.id}: speed_factor must be positive")


def largest_remainder(total: int, probabilities: Mapping[str, float]) -> dict[str, int]:
    """Integer allocation of ``total`` by the largest-remainder method.

    Keys are processed in sorted order; remainder ties also resolve in
    that order, so the result is independent of dict ordering.
    """
    keys = sorted(probabilities)
    psum = sum(probabilities[k] for k in keys)
    if abs(psum - 1.0) > 1e-6:
        raise InputError(f"probabilities sum to {psum}, expected 1")
    quotas = {k: total * probabilities[k] for k in keys}
    alloc = {k: math.floor(quotas[k]) for k in keys}
    short = total - sum(alloc.values())
    by_remainder = sorted(keys, key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in by_remainder[:short]:
        alloc[k] += 1
    return alloc


def sample_routes(counts: Mapping[str, int] | None = None,
                  turn_probabilities: Mapping[str, Mapping[str, float]] | None = None,
                  approach_totals: Mapping[str, int] | None = None,
                  horizon: tuple[float, float] = (0.0, 3600.0),
                  seed: int = 0,
                  speed_model: SpeedFactorModel | None = None,
                  arrivals: str = "uniform") -> list[VehicleSpec]:
    """Expand demand counts into an explicit timed, routed vehicle list.

    Two demand forms: per-route ``counts`` produce exactly that many
    vehicles per route; ``approach_totals`` plus ``turn_probabilities``
    (rows summing to 1) allocate each total over its routes by largest
    remainder.  Departures are drawn uniformly over the horizon from a
    seeded generator (``arrivals="poisson"`` uses exponential gaps
    instead), then sorted; speed factors come from the same stream and
    are clipped to [0.5, 2.0].  Identical inputs and seed give a
    byte-identical vehicle list.
    """
    start, end = horizon
    if not start < end:
        raise InputError("horizon start must be before end")
    resolved: dict[str, int] = {}
    if counts:
        for k in counts:
            if counts[k] < 0:
                raise InputError("counts must be >= 0")
        resolved.update(counts)
    if approach_totals:
        if not turn_probabilities:
            raise InputError("approach_totals need turn_probabilities")
        for approach in sorted(approach_totals):
            row = turn_probabilities.get(approach)
            if row is None:
                raise InputError(f"no turn probabilities for {approach}")
            alloc = largest_remainder(approach_totals[approach], row)
            for route, n in alloc.items():
                resolved[route] = resolved.get(route, 0) + n

    rng = np.random.default_rng(seed)
    drawn = []
    for route in sorted(resolved):
        n = resolved[route]
        if arrivals == "poisson":
            gaps = rng.exponential((end - start) / max(n, 1), size=n)
            departs = np.minimum(start + np.cumsum(gaps), end - 1e-6)
        else:
            departs = rng.uniform(start, end, size=n)
        if speed_model is not None and speed_model.std > 0:
            factors = rng.normal(speed_model.mean, speed_model.std, size=n)
        elif speed_model is not None:
            factors = np.full(n, speed_model.mean)
        else:
            factors = np.ones(n)
        factors = np.clip(factors, SPEED_FACTOR_MIN, SPEED_FACTOR_MAX)
        for i in range(n):
            drawn.append((float(departs[i]), route, i, float(factors[i])))
    drawn.sort(key=lambda d: (d[0], d[1], d[2]))
    return [VehicleSpec(id=f"v{i:06d}", depart=d, route=(route,), speed_factor=f)
            for i, (d, route, _, f) in enumerate(drawn)]


# ---------------------------------------------------------------------------
# Toy queue-discharge simulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VehicleResult:
    id: str
    depart: float
    arrive: float
    travel_time: float
    stops: int
    completed: bool


@dataclass
class RunResult:
    scenario_id: str
    vehicles: tuple[VehicleResult, ...]
    aggregates: dict

    def to_json(self) -> dict:
        return {"scenario_id": self.scenario_id,
                "aggregates": self.aggregates,
                "vehicles": [{"id": v.id, "depart": v.depart, "arrive": v.arrive,
                              "travel_time": v.travel_time, "stops": v.stops,
                              "completed": v.completed} for v in self.vehicles]}


class DischargeClock:
    """Earliest legal discharge instants for one phase at one intersection.

    Green windows repeat every cycle, shifted by the intersection offset.
    A vehicle whose earliest-possible instant falls before a green onset
    waits for the onset plus the startup lost time; one arriving while
    the light is already green rolls through unimpeded.
    """

    def __init__(self, timeline: SignalTimeline, phase: int, offset: float,
                 startup_lost: float):
        self.g_start, self.g_end = green_window(timeline, phase)
        if self.g_end - self.g_start <= startup_lost:
            raise InputError(
                f"phase {phase}: green shorter than startup lost time")
        self.cycle = timeline.cycle_length
        self.offset = offset
        self.startup = startup_lost

    def discharge_at(self, earliest: float) -> float:
        k = math.floor((earliest - self.offset - self.g_start) / self.cycle) - 1
        while True:
            onset = self.offset + self.g_start + k * self.cycle
            end = self.offset + self.g_end + k * self.cycle
            if earliest < onset:
                return onset + self.startup
            if earliest < end:
                return earliest
            k += 1


def run_toy_sim(network: Network,
                timelines: Mapping[str, tuple[SignalTimeline, float]],
                vehicles: Sequence[VehicleSpec],
                horizon_end: float,
                scenario_id: str = "",
                headway: float = SATURATION_HEADWAY,
                startup_lost: float = STARTUP_LOST_TIME) -> RunResult:
    """Deterministic queue-discharge simulation.

    Vehicles traverse each link in length/(free_speed * speed_factor)
    seconds and join their movement's FIFO queue at the stop bar.  Left
    turns beyond the pocket capacity spill into the through lane: a
    through/right vehicle arriving while the pocket is overflowing cannot
    discharge before the newest overflowing left does.  A vehicle's trip
    ends when it discharges through its final movement; vehicles not
    cleared by ``horizon_end`` are reported incomplete.
    """
    routes = {}
    for v in vehicles:
        if not 0 <= v.depart <= horizon_end:
            raise InputError(f"vehicle {v.id}: departs outside the horizon")
        moves = []
        for rid in v.route:
            moves.extend(network.route_movements(rid))
        for a, b in zip(moves, moves[1:]):
            if a.out_link != b.in_link:
                raise InputError(f"vehicle {v.id}: disconnected route")
        if not moves:
            raise InputError(f"vehicle {v.id}: empty route")
        routes[v.id] = moves

    clocks: dict[tuple[str, int], DischargeClock] = {}
    for iid, (timeline, offset) in timelines.items():
        phases = {m.phase for m in network.movements.values() if m.intersection == iid}
        for phase in phases:
            clocks[(iid, phase)] = DischargeClock(timeline, phase, offset, startup_lost)

    last_discharge: dict[str, float] = {}           # movement id -> time
    left_log: dict[str, list[tuple[float, float]]] = {}  # in_link -> [(arrive, discharge)]
    stops_count = {v.id: 0 for v in vehicles}
    arrive_t: dict[str, float] = {}
    delays: dict[tuple[str, str], list[float]] = {}

    def traverse(link_id: str, factor: float) -> float:
        link = network.links[link_id]
        return link.length / (link.free_speed * factor)

    heap = []
    specs = {v.id: v for v in vehicles}
    for v in vehicles:
        first = routes[v.id][0]
        heappush(heap, (v.depart + traverse(first.in_link, v.speed_factor), v.id, 0))

    while heap:
        a, vid, leg = heappop(heap)
        v = specs[vid]
        move = routes[vid][leg]
        clock = clocks.get((move.intersection, move.phase))
        if clock is None:
            raise InputError(f"no timeline covers intersection {move.intersection}")
        earliest = a
        prev = last_discharge.get(move.id)
        if prev is not None:
            earliest = max(earliest, prev + headway)
        link = network.links[move.in_link]
        cap = link.left_turn_buffer_capacity
        if move.kind in ("through", "right") and cap is not None:
            # Lefts still waiting at our arrival, in their arrival order;
            # the first `cap` sit in the pocket, the rest block our lane.
            waiting = [d for (la, d) in left_log.get(move.in_link, ())
                       if la <= a < d]
            if len(waiting) > cap:
                earliest = max(earliest, max(waiting[cap:]))
        d = clock.discharge_at(earliest)
        last_discharge[move.id] = d
        if move.kind == "left":
            left_log.setdefault(move.in_link, []).append((a, d))
        if d - a > 1e-9:
            stops_count[vid] += 1
        delays.setdefault((move.intersection, move.approach), []).append(d - a)
        if leg + 1 < len(routes[vid]):
            heappush(heap, (d + traverse(move.out_link, v.speed_factor), vid, leg + 1))
        else:
            arrive_t[vid] = d

    results = []
    for v in vehicles:
        arrive = arrive_t[v.id]
        results.append(VehicleResult(
            id=v.id, depart=v.depart, arrive=arrive,
            travel_time=arrive - v.depart, stops=stops_count[v.id],
            completed=arrive <= horizon_end))
    completed = [r for r in results if r.completed]
    tts = sorted(r.travel_time for r in completed)
    aggregates = {
        "injected": len(results),
        "throughput": len(completed),
        "incomplete": len(results) - len(completed),
        "mean_corridor_travel_time":
            (sum(tts) / len(tts)) if tts else None,
        "p95_travel_time": tts[max(0, math.ceil(0.95 * len(tts)) - 1)] if tts else None,
        "total_delay": sum(x for d in delays.values() for x in d),
        "mean_delay_per_approach": {
            f"{iid}:{app}": sum(d) / len(d)
            for (iid, app), d in sorted(delays.items())},
    }
    return RunResult(scenario_id=scenario_id, vehicles=tuple(results),
                     aggregates=aggregates)


# ---------------------------------------------------------------------------
# External-process backend
# ---------------------------------------------------------------------------

def routes_xml(vehicles: Sequence[VehicleSpec]) -> str:
    root = ET.Element("routes")
    for v in sorted(vehicles, key=lambda v: (v.depart, v.id)):
        el = ET.SubElement(root, "vehicle", id=v.id, depart=str(v.depart),
                           speedFactor=str(v.speed_factor))
        ET.SubElement(el, "route", edges=" ".join(v.route))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def parse_tripinfo(text: str) -> list[dict]:
    """Per-vehicle rows from a trip-info XML document.

    Only id/depart/arrival/duration are required; unknown attributes are
    ignored.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise BackendError(f"unparseable trip-info output: {exc}") from exc
    rows = []
    for el in root.iter("tripinfo"):
        try:
            rows.append({"id": el.get("id"),
                         "depart": float(el.get("depart")),
                         "arrival": float(el.get("arrival")),
                         "duration": float(el.get("duration"))})
        except (TypeError, ValueError) as exc:
            raise BackendError(f"bad tripinfo element: {exc}") from exc
    return rows


def run_external(vehicles: Sequence[VehicleSpec],
                 tls_programs: Mapping[str, str],
                 command_template: str,
                 workdir: str | Path,
                 timeout_s: float = 300.0,
                 scenario_id: str = "",
                 extra_config: dict | None = None) -> RunResult:
    """Write scenario files, run the external simulator, parse trip infos.

    ``command_template`` must contain ``${config}`` and ``${output}``
    placeholders.  Nonzero exit, timeout, and unparseable output raise
    BackendError.
    """
    if "${config}" not in command_template or "${output}" not in command_template:
        raise InputError("command template needs ${config} and ${output} placeholders")
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    routes_path = wd / "routes.xml"
    routes_path.write_text(routes_xml(vehicles))
    tls_paths = {}
    for iid, program in tls_programs.items():
        p = wd / f"{iid}.tls.xml"
        p.write_text(program)
        tls_paths[iid] = str(p)
    output_path = wd / "tripinfo.xml"
    config = {"routes": str(routes_path), "tls": tls_paths,
              "output": str(output_path)}
    config.update(extra_config or {})
    config_path = wd / "scenario.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True))

    cmd = Template(command_template).substitute(config=str(config_path),
                                                output=str(output_path))
    try:
        proc = subprocess.run(shlex.split(cmd), cwd=wd, capture_output=True,
                              text=True, timeout=timeout_s)
    except subprocess.TimeoutExpired as exc:
        raise BackendError(f"backend timed out after {timeout_s}s") from exc
    if proc.returncode != 0:
        raise BackendError(
            f"backend exited with code {proc.returncode}: {proc.stderr[-2000:]}")
    if not output_path.exists():
        raise BackendError("backend produced no output file")
    rows = parse_tripinfo(output_path.read_text())

    results = tuple(VehicleResult(id=r["id"], depart=r["depart"], arrive=r["arrival"],
                                  travel_time=r["duration"], stops=0, completed=True)
                    for r in rows)
    tts = sorted(r.travel_time for r in results)
    aggregates = {
        "injected": len(results),
        "throughput": len(results),
        "incomplete": 0,
        "mean_corridor_travel_time": (sum(tts) / len(tts)) if tts else None,
        "p95_travel_time": tts[max(0, math.ceil(0.95 * len(tts)) - 1)] if tts else None,
        "total_delay": None,
        "mean_delay_per_approach": {},
    }
    return RunResult(scenario_id=scenario_id, vehicles=results, aggregates=aggregates)
