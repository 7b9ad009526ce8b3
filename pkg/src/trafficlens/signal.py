"""Dual-ring, eight-phase fixed-time signal plans.

Ring 1 runs phases 1,2 | barrier | 3,4 while ring 2 runs 5,6 | barrier |
7,8; at any instant the two green phases must sit in different rings on
the same side of the barrier.  A plan (splits + clearances per phase)
compiles to a cyclic timeline of per-phase G/Y/R states, which can be
emitted as a static traffic-light program for an external microsimulator.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from bisect import bisect_right
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import InputError

RING1 = (1, 2, 3, 4)
RING2 = (5, 6, 7, 8)
BARRIER_A = frozenset({1, 2, 5, 6})
BARRIER_B = frozenset({3, 4, 7, 8})

DEFAULT_YELLOW = 4.0
DEFAULT_ALL_RED = 2.0


@dataclass(frozen=True)
class PhaseSpec:
    phase: int
    min_green: float
    max_green: float
    yellow: float = DEFAULT_YELLOW
    all_red: float = DEFAULT_ALL_RED


@dataclass(frozen=True)
class RingBarrierPlan:
    """Eight phase specs plus per-phase green splits and a cycle length.

    Constructing a plan performs only shape checks; semantic checks
    (ring sums, barrier sync, split bounds) are data returned by
    :func:`validate_plan` so a validator can report every violation.
    """

    phases: tuple[PhaseSpec, ...]
    splits: tuple[float, ...]
    cycle_length: float

    def __post_init__(self):
        if tuple(p.phase for p in self.phases) != (1, 2, 3, 4, 5, 6, 7, 8):
            raise InputError("plan needs phase specs numbered 1..8 in order")
        if len(self.splits) != 8:
            raise InputError("plan needs 8 splits")

    def phase_spec(self, phase: int) -> PhaseSpec:
        return self.phases[phase - 1]

    def split(self, phase: int) -> float:
        return self.splits[phase - 1]

    def block(self, phase: int) -> float:
        """Split plus clearances: the time a phase owns its ring."""
        spec = self.phase_spec(phase)
        return self.split(phase) + spec.yellow + spec.all_red


@dataclass(frozen=True)
class SignalTimeline:
    """Cyclic per-phase state intervals; states indexed by phase-1."""

    cycle_length: float
    intervals: tuple[tuple[float, tuple[str, ...]], ...]

    def starts(self) -> list[float]:
        out, t = [], 0.0
        for duration, _ in self.intervals:
            out.append(t)
            t += duration
        return out


def validate_plan(plan: RingBarrierPlan) -> list[str]:
    """Every violated plan invariant, as human-readable strings."""
    v = []
    for p in plan.phases:
        if not p.min_green > 0:
            v.append(f"phase {p.phase}: min_green must be > 0")
        if p.min_green > p.max_green:
            v.append(f"phase {p.phase}: min_green exceeds max_green")
        if p.yellow < 3:
            v.append(f"phase {p.phase}: yellow below 3 s")
        if p.all_red < 0:
            v.append(f"phase {p.phase}: negative all_red")
    for phase in range(1, 9):
        s = plan.split(phase)
        spec = plan.phase_spec(phase)
        if s < spec.min_green:
            v.append(f"phase {phase}: split {s} below min_green {spec.min_green}")
        if s > spec.max_green:
            v.append(f"phase {phase}: split {s} above max_green {spec.max_green}")
    ring1_sum = sum(plan.block(p) for p in RING1)
    ring2_sum = sum(plan.block(p) for p in RING2)
    if abs(ring1_sum - plan.cycle_length) > 1e-9:
        v.append(f"ring 1 blocks sum to {ring1_sum}, cycle is {plan.cycle_length}")
    if abs(ring2_sum - plan.cycle_length) > 1e-9:
        v.append(f"ring 2 blocks sum to {ring2_sum}, cycle is {plan.cycle_length}")
    side_a1 = plan.block(1) + plan.block(2)
    side_a2 = plan.block(5) + plan.block(6)
    if abs(side_a1 - side_a2) > 1e-9:
        v.append(f"barrier group A desynchronized: ring1 {side_a1} vs ring2 {side_a2} "
                 "(would produce conflicting greens)")
    side_b1 = plan.block(3) + plan.block(4)
    side_b2 = plan.block(7) + plan.block(8)
    if abs(side_b1 - side_b2) > 1e-9:
        v.append(f"barrier group B desynchronized: ring1 {side_b1} vs ring2 {side_b2} "
                 "(would produce conflicting greens)")
    return v


def _ring_schedule(plan: RingBarrierPlan, ring: Sequence[int]):
    """[(start, end, phase, state)] blocks for one ring over a cycle."""
    blocks = []
    t = 0.0
    for phase in ring:
        spec = plan.phase_spec(phase)
        s = plan.split(phase)
        blocks.append((t, t + s, phase, "G"))
        t += s
        blocks.append((t, t + spec.yellow, phase, "Y"))
        t += spec.yellow
        t += spec.all_red  # phase shows red during its all-red clearance
    return blocks


def compile_plan(plan: RingBarrierPlan) -> SignalTimeline:
    """Compile a valid plan to the merged two-ring state timeline."""
    violations = validate_plan(plan)
    if violations:
        raise InputError("invalid plan: " + "; ".join(violations))
    schedules = [_ring_schedule(plan, RING1), _ring_schedule(plan, RING2)]
    breakpoints = {0.0, plan.cycle_length}
    for sched in schedules:
        for start, end, _, _ in sched:
            breakpoints.add(start)
            breakpoints.add(end)
    pts = sorted(breakpoints)
    merged = [pts[0]]
    for b in pts[1:]:
        if b - merged[-1] > 1e-9:
            merged.append(b)

    def state_at_instant(t: float) -> tuple[str, ...]:
        states = ["R"] * 8
        for sched in schedules:
            for start, end, phase, st in sched:
                if start <= t < end:
                    states[phase - 1] = st
        return tuple(states)

    intervals = []
    for a, b in zip(merged, merged[1:]):
        intervals.append((b - a, state_at_instant((a + b) / 2.0)))
    return SignalTimeline(cycle_length=plan.cycle_length, intervals=tuple(intervals))


def state_at(timeline: SignalTimeline, t: float) -> dict[int, str]:
    """Per-phase state at time t (cyclic; boundaries belong to the later
    interval)."""
    if t < 0:
        raise InputError("t must be >= 0")
    tm = t % timeline.cycle_length
    starts = timeline.starts()
    idx = bisect_right(starts, tm) - 1
    states = timeline.intervals[idx][1]
    return {p: states[p - 1] for p in range(1, 9)}


def green_window(timeline: SignalTimeline, phase: int) -> tuple[float, float]:
    """[start, end) of the phase's green run within one cycle."""
    t = 0.0
    start = end = None
    for duration, states in timeline.intervals:
        if states[phase - 1] == "G":
            if start is None:
                start = t
            end = t + duration
        t += duration
    if start is None:
        raise InputError(f"phase {phase} never green")
    return start, end


def compatible(states: Mapping[int, str] | Sequence[str]) -> bool:
    """True when the green set is a legal instantaneous combination."""
    if isinstance(states, Mapping):
        greens = [p for p, s in states.items() if s == "G"]
    else:
        greens = [i + 1 for i, s in enumerate(states) if s == "G"]
    if len(greens) <= 1:
        return True
    if len(greens) != 2:
        return False
    a, b = greens
    same_ring = (a in RING1) == (b in RING1)
    same_group = (a in BARRIER_A) == (b in BARRIER_A)
    return (not same_ring) and same_group


def emit_tls_program(timeline: SignalTimeline, movement_map: Mapping[int, Sequence[int]],
                     tls_id: str = "tls", program_id: str = "plan") -> str:
    """Render the timeline as a static traffic-light program document.

    ``movement_map`` assigns each phase the signal-head indices it
    controls; the emitted state strings use G/y/r per head index.
    """
    missing = [p for p in range(1, 9) if p not in movement_map]
    if missing:
        raise InputError(f"movement_map missing phases {missing}")
    head_phase: dict[int, int] = {}
    for phase, heads in movement_map.items():
        for h in heads:
            if h in head_phase:
                raise InputError(f"head {h} mapped to two phases")
            head_phase[h] = phase
    n_heads = max(head_phase) + 1
    if set(head_phase) != set(range(n_heads)):
        raise InputError("head indices must be contiguous from 0")

    root = ET.Element("additional")
    logic = ET.SubElement(root, "tlLogic", id=tls_id, type="static",
                          programID=program_id, offset="0")
    char = {"G": "G", "Y": "y", "R": "r"}
    for duration, states in timeline.intervals:
        s = "".join(char[states[head_phase[h] - 1]] for h in range(n_heads))
        ET.SubElement(logic, "phase", duration=str(duration), state=s)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def parse_tls_program(text: str) -> list[tuple[float, str]]:
    root = ET.fromstring(text)
    out = []
    for el in root.iter("phase"):
        out.append((float(el.get("duration")), el.get("state")))
    return out


# ---------------------------------------------------------------------------
# JSON plan interface
# ---------------------------------------------------------------------------

def plan_to_json(plan: RingBarrierPlan) -> dict:
    return {"cycle_length": plan.cycle_length,
            "splits": list(plan.splits),
            "phases": [{"phase": p.phase, "min_green": p.min_green,
                        "max_green": p.max_green, "yellow": p.yellow,
                        "all_red": p.all_red} for p in plan.phases]}


def plan_from_json(doc: dict) -> RingBarrierPlan:
    try:
        phases = tuple(sorted(
            (PhaseSpec(phase=int(p["phase"]), min_green=float(p["min_green"]),
                       max_green=float(p["max_green"]),
                       yellow=float(p.get("yellow", DEFAULT_YELLOW)),
                       all_red=float(p.get("all_red", DEFAULT_ALL_RED)))
             for p in doc["phases"]), key=lambda p: p.phase))
        splits = doc["splits"]
        if isinstance(splits, Mapping):
            splits = [float(splits[str(p)]) for p in range(1, 9)]
        return RingBarrierPlan(phases=phases, splits=tuple(float(s) for s in splits),
                               cycle_length=float(doc["cycle_length"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad plan document: {exc}") from exc


def uniform_phase_specs(min_green: float = 4.0, max_green: float = 60.0,
                        yellow: float = DEFAULT_YELLOW,
                        all_red: float = DEFAULT_ALL_RED) -> tuple[PhaseSpec, ...]:
    return tuple(PhaseSpec(phase=p, min_green=min_green, max_green=max_green,
                           yellow=yellow, all_red=all_red) for p in range(1, 9))
