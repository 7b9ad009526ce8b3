"""Seeded synthetic data generators.

Vendor probe data cannot ship with the toolkit, so verification is
closed-loop: these generators produce signalized-intersection
trajectories (vehicles obeying a compiled signal timeline, with
kinematically consistent decelerations), controller event streams, and
toy networks, each with a ground-truth sidecar computed from the
generator's own arithmetic.  Analytics and detection results are then
compared against the sidecar.
"""

from __future__ import annotations

import math
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import geo, masks, signal, simkit
from .errors import InputError
from .geo import GeoPoint, PlanarPoint
from .ingest import AtspmEvent, Journey, TrajectorySample
from .masks import DIRECTION_BEARING, MaskSet
from .signal import RingBarrierPlan, compile_plan, uniform_phase_specs
from .simkit import DischargeClock, Link, Movement, Network

#: Standard dual-ring phase assignment: a street's two throughs sit in
#: opposite rings of one barrier group, each paired with the opposing
#: left turn.
PHASE_BY_MOVEMENT = {
    ("EB", "through"): 2, ("EB", "right"): 2, ("EB", "left"): 5,
    ("WB", "through"): 6, ("WB", "right"): 6, ("WB", "left"): 1,
    ("NB", "through"): 4, ("NB", "right"): 4, ("NB", "left"): 7,
    ("SB", "through"): 8, ("SB", "right"): 8, ("SB", "left"): 3,
}

#: Exit travel direction per (approach, turn kind): left turns go 90
#: degrees counter-clockwise, right turns clockwise.
TURN_DEST = {
    ("NB", "through"): "NB", ("NB", "left"): "WB", ("NB", "right"): "EB",
    ("SB", "through"): "SB", ("SB", "left"): "EB", ("SB", "right"): "WB",
    ("EB", "through"): "EB", ("EB", "left"): "NB", ("EB", "right"): "SB",
    ("WB", "through"): "WB", ("WB", "left"): "SB", ("WB", "right"): "NB",
}

QUEUE_SPACING_M = 7.5      # stop-bar setback per queued vehicle
STOP_BAR_DIST_M = 25.0     # stop bar distance from the intersection center
COMFORT_DECEL = 1.5        # m/s^2; stays far above the severe-braking threshold
COMFORT_ACCEL = 1.5

#: Truth stops are reported over the interval the vehicle is slower than
#: walking pace, the same notion a threshold-based stop detector
#: estimates; with comfort rates the interval extends the standstill by
#: thr/decel + thr/accel and starts thr^2/(2 decel) short of the rest
#: point.
STOP_TRUTH_SPEED = 1.0


def _unit(bearing_deg: float) -> tuple[float, float]:
    r = math.radians(bearing_deg)
    return math.sin(r), math.cos(r)


def default_plan(cycle_length: float = 120.0,
                 through_split: float = 30.0,
                 left_split: float = 18.0) -> RingBarrierPlan:
    """A symmetric valid plan: lefts lead, throughs follow, both barriers
    equal.  Defaults satisfy 2*(left+6) + 2*(through+6) = cycle."""
    splits = {1: left_split, 2: through_split, 3: left_split, 4: through_split,
              5: left_split, 6: through_split, 7: left_split, 8: through_split}
    return RingBarrierPlan(phases=uniform_phase_specs(),
                           splits=tuple(splits[p] for p in range(1, 9)),
                           cycle_length=cycle_length)


# ---------------------------------------------------------------------------
# Piecewise constant-acceleration motion along a one-turn path
# ---------------------------------------------------------------------------

class _Motion:
    """Arc-length motion profile built from constant-acceleration pieces."""

    def __init__(self, t0: float, v0: float):
        self.segments: list[tuple[float, float, float, float, float]] = []
        self.t, self.u, self.v = t0, 0.0, v0

    def _add(self, a: float, dt: float, v_end: float | None = None):
        if dt <= 1e-12:
            return
        self.segments.append((self.t, self.u, self.v, a, dt))
        self.u += self.v * dt + 0.5 * a * dt * dt
        self.t += dt
        self.v = self.v + a * dt if v_end is None else v_end

    def cruise_to(self, u_target: float):
        d = u_target - self.u
        if d < -1e-9:
            raise InputError("motion cannot move backwards")
        if d > 0:
            self._add(0.0, d / self.v)

    def travel_stop(self, u_stop: float, cruise: float,
                    decel: float = COMFORT_DECEL, accel: float = COMFORT_ACCEL):
        """Come to rest exactly at ``u_stop`` from the current state.

        From cruise this is cruise-then-brake; from rest it is a
        triangular (or trapezoidal, if there is room to reach cruise)
        speed profile.
        """
        d = u_stop - self.u
        if d < -1e-9:
            raise InputError("motion cannot move backwards")
        if self.v > 1e-12:
            d_brake = self.v ** 2 / (2.0 * decel)
            if d < d_brake - 1e-9:
                raise InputError("no room to brake comfortably")
            self.cruise_to(u_stop - d_brake)
            self._add(-decel, self.v / decel, v_end=0.0)
            return
        if d <= 1e-9:
            return
        d_full = cruise * cruise / (2.0 * accel) + cruise * cruise / (2.0 * decel)
        if d >= d_full:
            self._add(accel, cruise / accel, v_end=cruise)
            self.cruise_to(u_stop - cruise * cruise / (2.0 * decel))
            self._add(-decel, cruise / decel, v_end=0.0)
        else:
            v_peak = math.sqrt(2.0 * accel * decel * d / (accel + decel))
            self._add(accel, v_peak / accel, v_end=v_peak)
            self._add(-decel, v_peak / decel, v_end=0.0)

    def dwell_until(self, t_go: float):
        self._add(0.0, t_go - self.t)

    def accel_to(self, v_target: float, accel: float = COMFORT_ACCEL):
        if v_target > self.v:
            self._add(accel, (v_target - self.v) / accel, v_end=v_target)

    def dip(self, delta_v: float, decel_rate: float, accel: float = COMFORT_ACCEL):
        """A sharp speed drop followed by a gentle recovery."""
        v0 = self.v
        self._add(-decel_rate, delta_v / decel_rate, v_end=v0 - delta_v)
        self._add(accel, delta_v / accel, v_end=v0)

    def end(self) -> float:
        return self.t

    def sample(self, t: float) -> tuple[float, float]:
        """(arc position, speed) at absolute time t."""
        starts = [s[0] for s in self.segments]
        i = max(0, bisect_right(starts, t) - 1)
        t0, u0, v0, a, dt = self.segments[i]
        tau = min(max(t - t0, 0.0), dt)
        return u0 + v0 * tau + 0.5 * a * tau * tau, v0 + a * tau

    def time_at(self, u_target: float) -> float:
        """First time the motion reaches arc position ``u_target``."""
        for t0, u0, v0, a, dt in self.segments:
            u_end = u0 + v0 * dt + 0.5 * a * dt * dt
            if u_target > u_end + 1e-9:
                continue
            d = max(u_target - u0, 0.0)
            if a == 0.0:
                if v0 <= 0:
                    continue
                return t0 + d / v0
            disc = v0 * v0 + 2.0 * a * d
            if disc < 0:
                continue
            return t0 + (-v0 + math.sqrt(disc)) / a if a > 0 else \
                t0 + (v0 - math.sqrt(disc)) / (-a)
        raise InputError(f"motion never reaches u={u_target}")

    def breakpoints(self) -> list[float]:
        out = [s[0] for s in self.segments]
        out.append(self.end())
        return out


# ---------------------------------------------------------------------------
# Signalized-intersection trajectory generator
# ---------------------------------------------------------------------------

@dataclass
class TrafficSpec:
    """Parameters for one synthetic intersection-hour."""

    origin: GeoPoint = GeoPoint(-81.2, 29.15)
    intersection_id: str = "I1"
    t0: float = 1_700_000_000.0           # window start, epoch seconds
    duration_s: float = 3600.0
    approach_len_m: float = 1100.0        # entry point to center
    exit_len_m: float = 1100.0
    cruise_mps: tuple[float, float] = (13.0, 17.0)   # per-vehicle uniform range
    sample_interval_s: float = 3.0
    plan: RingBarrierPlan = field(default_factory=default_plan)
    #: vehicles per movement over the window, keyed "NB_through" etc.
    demand: dict = field(default_factory=lambda: {
        f"{app}_{kind}": (120 if kind == "through" else 40)
        for app in masks.DIRECTIONS for kind in ("through", "left", "right")})
    braking_injections: int = 0
    braking_decel: float = 4.75           # m/s^2, just beyond 0.47 g
    braking_duration_s: float = 2.0
    blockage_count: int = 0
    blockage_dwell_s: float = 150.0
    seed: int = 0
    #: departures stop this long before the window end so journeys finish
    depart_margin_s: float = 400.0


def generate_trajectories(spec: TrafficSpec) -> tuple[list[Journey], dict]:
    """Simulate vehicles through one signalized intersection.

    Vehicles cruise in, decelerate comfortably to queue when the signal
    or the queue ahead requires it, discharge in FIFO order at the
    saturation headway after the startup loss, then cruise out through
    their turn.  Samples land on a 3-second grid plus every motion
    breakpoint, so injected events align exactly with sample boundaries.

    Returns the raw journeys plus a ground-truth sidecar with the
    movement, mask crossing times, stops, and braking events of every
    journey, all computed from the motion profiles (independently of the
    analytics pipeline).
    """
    rng = np.random.default_rng(spec.seed)
    timeline = compile_plan(spec.plan)
    d_in, d_out = spec.approach_len_m, spec.exit_len_m
    u_bar = d_in - STOP_BAR_DIST_M
    mask_radius = masks.DEFAULT_RADIUS_M

    # Departure draws per movement, in canonical order.
    vehicles = []
    for key in sorted(spec.demand):
        n = int(spec.demand[key])
        approach, kind = key.split("_")
        if (approach, kind) not in PHASE_BY_MOVEMENT:
            raise InputError(f"bad demand key {key!r}")
        tes = rng.uniform(spec.t0, spec.t0 + spec.duration_s - spec.depart_margin_s, n)
        cruises = rng.uniform(*spec.cruise_mps, n)
        for te, cruise in zip(np.sort(tes), cruises):
            vehicles.append({"approach": approach, "kind": kind,
                             "te": float(te), "cruise": float(cruise)})
    vehicles.sort(key=lambda v: (v["te"], v["approach"], v["kind"]))
    for i, v in enumerate(vehicles):
        v["id"] = f"syn{spec.seed:04d}-{i:05d}"

    idx = np.arange(len(vehicles))
    blocked = set(rng.choice(idx, size=min(spec.blockage_count, len(idx)),
                             replace=False).tolist()) if spec.blockage_count else set()
    remaining = np.array([i for i in idx if i not in blocked])
    braked = set(rng.choice(remaining, size=min(spec.braking_injections, len(remaining)),
                            replace=False).tolist()) if spec.braking_injections else set()

    # Pre-signal arrival time at the stop bar, were the signal green.
    for i, v in enumerate(vehicles):
        penalty = 0.0
        if i in blocked:
            penalty = spec.blockage_dwell_s + v["cruise"] / (2 * COMFORT_DECEL) \
                + v["cruise"] / (2 * COMFORT_ACCEL)
        v["tb"] = v["te"] + u_bar / v["cruise"] + penalty
        v["blocked"] = i in blocked
        v["braked"] = i in braked

    # FIFO queue logic per (approach, kind) lane.
    clocks = {}
    for (app, kind), phase in PHASE_BY_MOVEMENT.items():
        clocks[(app, kind)] = DischargeClock(timeline, phase, offset=0.0,
                                             startup_lost=simkit.STARTUP_LOST_TIME)
    lanes: dict[tuple[str, str], list[dict]] = {}
    for v in vehicles:
        lanes.setdefault((v["approach"], v["kind"]), []).append(v)

    def motion_to_rest(v, u_stop: float) -> _Motion:
        m = _Motion(v["te"], v["cruise"])
        if v["blocked"]:
            m.travel_stop(d_in - 60.0, v["cruise"])
            m.dwell_until(m.end() + spec.blockage_dwell_s)
        m.travel_stop(u_stop, v["cruise"])
        return m

    for lane_key, lane in lanes.items():
        lane.sort(key=lambda v: v["tb"])
        clock = clocks[lane_key]
        last_discharge = None
        waiting: list[tuple[float, float]] = []   # (rest_t, go_t)
        for v in lane:
            tb = v["tb"]
            ahead = [g for (_, g) in waiting if g > tb]
            server_free = last_discharge is None or \
                last_discharge + simkit.SATURATION_HEADWAY <= tb
            if not ahead and server_free and clock.discharge_at(tb) == tb:
                v["queue_index"] = None           # rolls through on green
                last_discharge = tb
                continue
            q = len(ahead)
            v["queue_index"] = q
            u_stop = u_bar - QUEUE_SPACING_M * q
            if u_stop < d_in - mask_radius:
                warnings.warn(f"queue on {lane_key} reaches past the mask")
            rest_t = motion_to_rest(v, u_stop).end()
            earliest = rest_t
            if last_discharge is not None:
                earliest = max(earliest, last_discharge + simkit.SATURATION_HEADWAY)
            go = clock.discharge_at(earliest)
            last_discharge = go
            waiting.append((rest_t, go))
            v["rest_t"], v["go_t"], v["u_stop"] = rest_t, go, u_stop

    # Full motion profiles, samples, and truth.
    thr = STOP_TRUTH_SPEED
    lead = thr / COMFORT_DECEL          # below threshold before standstill
    tail = thr / COMFORT_ACCEL          # below threshold after departure
    creep = thr * thr / (2.0 * COMFORT_DECEL)  # distance rolled while below

    def stop_record(t_rest, dwell, u_rest, approach, kind):
        return {"t_start": t_rest - lead, "duration": dwell + lead + tail,
                "u": u_rest - creep,
                "dist_from_bar": abs(u_bar - (u_rest - creep)),
                "approach": approach, "kind": kind}

    journeys = []
    truth_journeys = {}
    for v in vehicles:
        m = _Motion(v["te"], v["cruise"])
        stops = []
        if v["blocked"]:
            m.travel_stop(d_in - 60.0, v["cruise"])
            t_rest = m.end()
            m.dwell_until(t_rest + spec.blockage_dwell_s)
            stops.append(stop_record(t_rest, spec.blockage_dwell_s, d_in - 60.0,
                                     v["approach"], "blockage"))
        if v["queue_index"] is not None:
            m.travel_stop(v["u_stop"], v["cruise"])
            m.dwell_until(v["go_t"])
            stops.append(stop_record(v["rest_t"], v["go_t"] - v["rest_t"],
                                     v["u_stop"], v["approach"], "signal"))
        m.accel_to(v["cruise"])
        braking = []
        if v["braked"]:
            # Exit-leg dip: far enough out that any queue discharge has
            # regained cruise speed, close enough that the whole dip stays
            # inside the mask.
            u_dip = d_in + 85.0
            m.cruise_to(u_dip)
            t_dip = m.end()
            m.dip(spec.braking_decel * spec.braking_duration_s,
                  spec.braking_decel)
            braking.append({"t_start": t_dip,
                            "duration": spec.braking_duration_s,
                            "peak_decel": -spec.braking_decel, "u": u_dip})
        m.cruise_to(d_in + d_out)

        entry_t = m.time_at(d_in - mask_radius)
        exit_t = m.time_at(d_in + mask_radius)

        # Sample on the grid plus every motion breakpoint, plus points just
        # beside each full stop so measured stop durations track the true
        # dwell instead of the sampling grid.
        ts = set(np.arange(v["te"], m.end(), spec.sample_interval_s).tolist())
        ts.add(m.end())
        ts.update(m.breakpoints())
        for t0s, u0s, v0s, a, dt in m.segments:
            v_end = v0s + a * dt
            if a < 0 and v_end < 0.9 < v0s:
                ts.add(t0s + (v0s - 0.9) / -a)
            if a > 0 and v0s < 1.2 < v_end:
                ts.add(t0s + (1.2 - v0s) / a)
        tss = sorted(ts)
        dedup = [tss[0]]
        for t in tss[1:]:
            if t - dedup[-1] > 1e-9:
                dedup.append(t)

        head_in = _unit(DIRECTION_BEARING[v["approach"]])
        head_out = _unit(DIRECTION_BEARING[TURN_DEST[(v["approach"], v["kind"])]])
        entry_xy = (-d_in * head_in[0], -d_in * head_in[1])

        def to_xy(u: float) -> tuple[float, float]:
            if u <= d_in:
                return (entry_xy[0] + u * head_in[0], entry_xy[1] + u * head_in[1])
            return ((u - d_in) * head_out[0], (u - d_in) * head_out[1])

        samples = []
        for t in dedup:
            u, speed = m.sample(t)
            x, y = to_xy(u)
            pos = geo.unproject_from_local(spec.origin, [PlanarPoint(x, y)])[0]
            samples.append(TrajectorySample(journey_id=v["id"], t=t, pos=pos,
                                            speed=speed, ignition="on"))
        journeys.append(Journey(id=v["id"], samples=tuple(samples)))

        truth_journeys[v["id"]] = {
            "origin": v["approach"],
            "dest": TURN_DEST[(v["approach"], v["kind"])],
            "kind": v["kind"],
            "entry_t": entry_t, "exit_t": exit_t,
            "travel_time": exit_t - entry_t,
            "stops": [dict(s, xy=to_xy(s["u"])) for s in stops],
            "braking": [dict(b, xy=to_xy(b["u"])) for b in braking],
            "blockage": v["blocked"],
        }

    truth = {
        "seed": spec.seed,
        "intersection": spec.intersection_id,
        "origin": [spec.origin.lon, spec.origin.lat],
        "window": [spec.t0, spec.t0 + spec.duration_s],
        "cycle_length": spec.plan.cycle_length,
        "journeys": truth_journeys,
        "od": _truth_od(truth_journeys),
        "travel_time_mean": _truth_tt(truth_journeys),
        "queues": _truth_queues(truth_journeys),
    }
    return journeys, truth


def _truth_od(tj: dict) -> dict:
    od: dict[str, int] = {}
    for rec in tj.values():
        key = f"{rec['origin']}->{rec['dest']}"
        od[key] = od.get(key, 0) + 1
    return dict(sorted(od.items()))


def _truth_tt(tj: dict) -> dict:
    cells: dict[str, list[float]] = {}
    for rec in tj.values():
        cells.setdefault(f"{rec['origin']}->{rec['dest']}", []).append(rec["travel_time"])
    return {k: sum(v) / len(v) for k, v in sorted(cells.items())}


def _truth_queues(tj: dict, min_stop: float = 10.0) -> dict:
    dists: dict[str, list[float]] = {}
    for rec in tj.values():
        for s in rec["stops"]:
            if s["duration"] > min_stop:
                dists.setdefault(s["approach"], []).append(s["dist_from_bar"])
    out = {}
    for app, d in sorted(dists.items()):
        arr = np.array(d)
        out[app] = {"mu": float(arr.mean()),
                    "sigma": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                    "n": len(arr)}
    return out


def intersection_scene(spec: TrafficSpec) -> MaskSet:
    """The mask set matching generate_trajectories' geometry: one
    intersection at the origin with NS and EW centerlines."""
    reach = spec.approach_len_m + spec.exit_len_m
    ns = [PlanarPoint(0.0, -reach), PlanarPoint(0.0, reach)]
    ew = [PlanarPoint(-reach, 0.0), PlanarPoint(reach, 0.0)]
    roads = [[g for g in geo.unproject_from_local(spec.origin, line)]
             for line in (ns, ew)]
    return masks.build_mask_set(roads, [(spec.intersection_id, spec.origin)])


# ---------------------------------------------------------------------------
# Controller event stream generator
# ---------------------------------------------------------------------------

def generate_atspm(intersection_id: str, volumes: dict[int, int],
                   t0: float, duration_s: float = 3600.0,
                   detector_by_phase: dict[int, int] | None = None,
                   seed: int = 0,
                   detector_on_code: int = 82) -> list[AtspmEvent]:
    """Detector-on events matching the requested per-phase volumes
    exactly, at seeded uniform times within the window."""
    if detector_by_phase is None:
        detector_by_phase = {p: p for p in volumes}
    rng = np.random.default_rng(seed)
    events = []
    for phase in sorted(volumes):
        n = int(volumes[phase])
        if n < 0:
            raise InputError("volumes must be >= 0")
        ts = rng.uniform(t0, t0 + duration_s, n)
        for t in ts:
            events.append(AtspmEvent(intersection_id=intersection_id,
                                     t=round(float(t), 1),
                                     event_code=detector_on_code,
                                     parameter=detector_by_phase[phase]))
    events.sort(key=lambda e: (e.t, e.parameter))
    return events


# ---------------------------------------------------------------------------
# Toy networks for the simulator
# ---------------------------------------------------------------------------

def cross_network(intersection_id: str = "I1", approach_len: float = 500.0,
                  free_speed: float = 15.0, pocket: int | None = 2) -> Network:
    """A four-leg intersection with 12 movements and per-leg entry/exit
    links."""
    links = {}
    for app in masks.DIRECTIONS:
        links[f"in_{app}"] = Link(id=f"in_{app}", frm=f"ext_{app}", to=intersection_id,
                                  length=approach_len, free_speed=free_speed,
                                  left_turn_buffer_capacity=pocket)
        links[f"out_{app}"] = Link(id=f"out_{app}", frm=intersection_id,
                                   to=f"ext_out_{app}", length=approach_len,
                                   free_speed=free_speed)
    movements = {}
    for (app, kind), phase in PHASE_BY_MOVEMENT.items():
        mid = f"{intersection_id}_{app}_{kind}"
        movements[mid] = Movement(id=mid, intersection=intersection_id,
                                  in_link=f"in_{app}",
                                  out_link=f"out_{TURN_DEST[(app, kind)]}",
                                  phase=phase, kind=kind, approach=app)
    return Network(intersections=(intersection_id,), links=links,
                   movements=movements)


def corridor_network(n_intersections: int = 3, spacing: float = 600.0,
                     side_len: float = 500.0, free_speed: float = 15.0,
                     pocket: int | None = 2) -> Network:
    """An east-west arterial of ``n`` intersections with side streets.

    Defines through movements along the corridor (routes "EB_corridor"
    and "WB_corridor") plus NB/SB side-street throughs at each node.
    """
    if n_intersections < 1:
        raise InputError("need at least one intersection")
    iids = tuple(f"I{i + 1}" for i in range(n_intersections))
    links, movements = {}, {}

    def add_link(lid, frm, to, length):
        links[lid] = Link(id=lid, frm=frm, to=to, length=length,
                          free_speed=free_speed, left_turn_buffer_capacity=pocket)

    # East-west chain links, both directions.
    add_link("EB_0", "ext_W", iids[0], spacing)
    for i in range(n_intersections - 1):
        add_link(f"EB_{i + 1}", iids[i], iids[i + 1], spacing)
    add_link(f"EB_{n_intersections}", iids[-1], "ext_E", spacing)
    add_link(f"WB_{n_intersections}", "ext_E", iids[-1], spacing)
    for i in range(n_intersections - 1, 0, -1):
        add_link(f"WB_{i}", iids[i], iids[i - 1], spacing)
    add_link("WB_0", iids[0], "ext_W", spacing)

    for i, iid in enumerate(iids):
        add_link(f"in_NB_{iid}", f"ext_S_{iid}", iid, side_len)
        add_link(f"out_NB_{iid}", iid, f"ext_N_{iid}", side_len)
        add_link(f"in_SB_{iid}", f"ext_N_{iid}", iid, side_len)
        add_link(f"out_SB_{iid}", iid, f"ext_S_{iid}", side_len)
        movements[f"{iid}_EB_through"] = Movement(
            id=f"{iid}_EB_through", intersection=iid, in_link=f"EB_{i}",
            out_link=f"EB_{i + 1}", phase=PHASE_BY_MOVEMENT[("EB", "through")],
            kind="through", approach="EB")
        movements[f"{iid}_WB_through"] = Movement(
            id=f"{iid}_WB_through", intersection=iid,
            in_link=f"WB_{i + 1}", out_link=f"WB_{i}",
            phase=PHASE_BY_MOVEMENT[("WB", "through")], kind="through", approach="WB")
        movements[f"{iid}_NB_through"] = Movement(
            id=f"{iid}_NB_through", intersection=iid, in_link=f"in_NB_{iid}",
            out_link=f"out_NB_{iid}", phase=PHASE_BY_MOVEMENT[("NB", "through")],
            kind="through", approach="NB")
        movements[f"{iid}_SB_through"] = Movement(
            id=f"{iid}_SB_through", intersection=iid, in_link=f"in_SB_{iid}",
            out_link=f"out_SB_{iid}", phase=PHASE_BY_MOVEMENT[("SB", "through")],
            kind="through", approach="SB")

    routes = {
        "EB_corridor": tuple(f"{iid}_EB_through" for iid in iids),
        "WB_corridor": tuple(f"{iid}_WB_through" for iid in reversed(iids)),
    }
    return Network(intersections=iids, links=links, movements=movements,
                   routes=routes)


def default_movement_map(network: Network) -> dict[int, list[int]]:
    """Phase -> signal-head indices, one head per movement in id order."""
    heads: dict[int, list[int]] = {p: [] for p in range(1, 9)}
    for i, mid in enumerate(sorted(network.movements)):
        heads[network.movements[mid].phase].append(i)
    for p in range(1, 9):
        if not heads[p]:
            # Keep the TLS program well-formed for phases with no movement.
            heads[p] = []
    return heads


# ---------------------------------------------------------------------------
# Labeled preprocessing corpus
# ---------------------------------------------------------------------------

def straight_journey(jid: str, origin: GeoPoint, start_xy: tuple[float, float],
                     bearing: float, speed: float, t0: float, duration: float,
                     ignition: str = "on", interval: float = 3.0) -> Journey:
    """A constant-speed straight-line journey (helper for corpora)."""
    ux, uy = _unit(bearing)
    samples = []
    ts = list(np.arange(0.0, duration, interval)) + [duration]
    for t in ts:
        x = start_xy[0] + speed * t * ux
        y = start_xy[1] + speed * t * uy
        pos = geo.unproject_from_local(origin, [PlanarPoint(x, y)])[0]
        samples.append(TrajectorySample(journey_id=jid, t=t0 + t, pos=pos,
                                        speed=speed, ignition=ignition))
    return Journey(id=jid, samples=tuple(samples))


def preprocessing_corpus(seed: int = 0, t0: float = 1_700_000_000.0
                         ) -> tuple[MaskSet, list[Journey], dict]:
    """Journeys exercising each preprocessing rule, with labels.

    Labels per journey: ``pass_filter`` (survives the ignition and
    2-minute rules) and ``fragments`` (clipped pieces retained after the
    150 m rule).
    """
    origin = GeoPoint(-81.3, 29.2)
    spec = TrafficSpec(origin=origin, t0=t0)
    scene = intersection_scene(spec)
    rng = np.random.default_rng(seed)
    journeys, labels = [], {}

    def add(jid, journey, pass_filter, fragments):
        journeys.append(journey)
        labels[jid] = {"pass_filter": pass_filter, "fragments": fragments}

    for i in range(6):
        jid = f"good-{i:02d}"
        bearing = [0.0, 90.0][i % 2]
        ux, uy = _unit(bearing)
        start = (-1100.0 * ux + rng.uniform(-5, 5) * uy,
                 -1100.0 * uy + rng.uniform(-5, 5) * ux)
        add(jid, straight_journey(jid, origin, start, bearing, 15.0, t0 + i, 150.0),
            True, 1)
    for i in range(3):
        jid = f"short-{i:02d}"   # 90 s < the 2-minute duration rule
        add(jid, straight_journey(jid, origin, (-675.0, 0.0), 90.0, 15.0,
                                  t0 + 30 * i, 90.0), False, 0)
    for i in range(2):
        jid = f"ignoff-{i:02d}"  # ignition off everywhere
        add(jid, straight_journey(jid, origin, (0.0, -1100.0), 0.0, 15.0,
                                  t0 + 10 * i, 150.0, ignition="off"), False, 0)
    for i in range(3):
        jid = f"shortclip-{i:02d}"  # chord through the disc under 150 m
        add(jid, straight_journey(jid, origin, (-1100.0, 110.0), 90.0, 15.0,
                                  t0 + 20 * i, 150.0), True, 0)
    for i in range(2):
        jid = f"nomask-{i:02d}"  # never enters any mask
        add(jid, straight_journey(jid, origin, (-1100.0, 5000.0), 90.0, 15.0,
                                  t0 + 40 * i, 150.0), True, 0)
    return scene, journeys, labels


# ---------------------------------------------------------------------------
# File emission (used by the synth CLI command)
# ---------------------------------------------------------------------------

def write_trajectories_csv(path, journeys: list[Journey]) -> None:
    with open(path, "w") as fh:
        fh.write("journey_id,timestamp,lat,lon,speed_mps,ignition\n")
        for j in journeys:
            for s in j.samples:
                fh.write(f"{s.journey_id},{s.t!r},{s.pos.lat!r},{s.pos.lon!r},"
                         f"{s.speed!r},{s.ignition}\n")


def write_atspm_csv(path, events: list[AtspmEvent]) -> None:
    with open(path, "w") as fh:
        fh.write("intersection_id,timestamp,event_code,parameter\n")
        for e in events:
            fh.write(f"{e.intersection_id},{e.t!r},{e.event_code},{e.parameter}\n")
