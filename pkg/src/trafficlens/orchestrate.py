"""Scenario grids, parallel execution, and optimum selection.

A sweep expands a parameter grid (cycle lengths, split schemes, demand
scales, offsets, seeds, speed-factor models) into self-contained
scenario specs, runs them over a process pool, and picks the best row by
a registered metric.  Results are keyed by a deterministic scenario id,
so the assembled sweep result is identical for any worker count.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import shlex
import shutil
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import simkit
from .errors import BackendError, InputError
from .signal import (compile_plan, emit_tls_program, plan_from_json,
                     plan_to_json, validate_plan)

#: Grid axes understood by the expander.
KNOWN_AXES = ("cycle_length", "splits", "demand_scale", "offset", "seed",
              "speed_factor")

#: metric name -> (direction, extractor); select_best minimizes "min"
#: metrics and maximizes "max" ones.
METRICS = {
    "mean_corridor_travel_time": ("min", lambda agg: agg.get("mean_corridor_travel_time")),
    "p95_travel_time": ("min", lambda agg: agg.get("p95_travel_time")),
    "total_delay": ("min", lambda agg: agg.get("total_delay")),
    "throughput": ("max", lambda agg: agg.get("throughput")),
}


@dataclass(frozen=True)
class ParameterGrid:
    axes: Mapping[str, tuple]

    def __post_init__(self):
        if not self.axes:
            raise InputError("grid needs at least one axis")
        for name, values in self.axes.items():
            if name not in KNOWN_AXES:
                raise InputError(f"unknown grid axis {name!r}")
            if len(values) == 0:
                raise InputError(f"axis {name!r} is empty")

    def size(self) -> int:
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n


@dataclass(frozen=True)
class ScenarioSpec:
    """One grid cell, self-contained and picklable."""

    scenario_id: str
    axes: dict
    network: dict                      # simkit network document
    plan: dict                         # ring-barrier plan document
    demand: dict                       # {"counts": {...}} and/or totals+probs
    horizon: tuple[float, float]
    seed: int
    offsets: dict                      # intersection id -> start shift (s)
    speed_factor: tuple[float, float] | None
    backend: str = "toy"
    backend_config: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    rows: list[dict]
    dropped: list[dict] = field(default_factory=list)

    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "ok"]

    def to_manifest(self) -> dict:
        return {"rows": self.rows, "dropped": self.dropped}


def _scenario_id(axes: dict) -> str:
    canonical = json.dumps(axes, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def expand_grid(grid: ParameterGrid, base: dict) -> tuple[list[ScenarioSpec], list[dict]]:
    """Cartesian expansion in canonical order (sorted axis names).

    ``base`` supplies everything the axes do not vary: the network
    document, the base plan (phases and default splits/cycle), demand
    counts, horizon, backend.  Combinations whose plan fails validation
    are dropped and reported, not fatal.
    """
    base_plan = base["plan"]
    names = sorted(grid.axes)
    scenarios, dropped = [], []
    for combo in itertools.product(*(grid.axes[n] for n in names)):
        axes = dict(zip(names, combo))
        plan_doc = dict(base_plan)
        if "cycle_length" in axes:
            plan_doc["cycle_length"] = axes["cycle_length"]
        if "splits" in axes:
            plan_doc["splits"] = list(axes["splits"])
        plan = plan_from_json(plan_doc)
        violations = validate_plan(plan)
        if violations:
            dropped.append({"axes": axes, "violations": violations})
            continue
        demand = dict(base.get("demand") or {})
        scale = axes.get("demand_scale", 1.0)
        if scale != 1.0 and "counts" in demand:
            demand = dict(demand)
            demand["counts"] = {k: int(round(v * scale))
                                for k, v in demand["counts"].items()}
        offsets = dict(base.get("offsets") or {})
        if "offset" in axes:
            offsets = {iid: axes["offset"] * i
                       for i, iid in enumerate(base["network"]["intersections"])}
        sf = axes.get("speed_factor", base.get("speed_factor"))
        scenarios.append(ScenarioSpec(
            scenario_id=_scenario_id(axes),
            axes=axes,
            network=base["network"],
            plan=plan_to_json(plan),
            demand=demand,
            horizon=tuple(base.get("horizon", (0.0, 3600.0))),
            seed=int(axes.get("seed", base.get("seed", 0))),
            offsets=offsets,
            speed_factor=tuple(sf) if sf else None,
            backend=base.get("backend", "toy"),
            backend_config=dict(base.get("backend_config") or {})))
    ids = [s.scenario_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise RuntimeError("scenario id hash collision; aborting sweep")
    return scenarios, dropped


def execute_scenario(spec: ScenarioSpec, results_dir: str | Path | None = None
                     ) -> simkit.RunResult:
    """Build vehicles and timelines from a scenario and run its backend."""
    network = simkit.network_from_json(spec.network)
    plan = plan_from_json(spec.plan)
    timeline = compile_plan(plan)
    timelines = {iid: (timeline, spec.offsets.get(iid, 0.0))
                 for iid in network.intersections}
    model = None
    if spec.speed_factor:
        model = simkit.SpeedFactorModel(mean=spec.speed_factor[0],
                                        std=spec.speed_factor[1])
    vehicles = simkit.sample_routes(
        counts=spec.demand.get("counts"),
        approach_totals=spec.demand.get("approach_totals"),
        turn_probabilities=spec.demand.get("turn_probabilities"),
        horizon=spec.horizon, seed=spec.seed, speed_model=model)
    if spec.backend == "toy":
        return simkit.run_toy_sim(network, timelines, vehicles,
                                  horizon_end=spec.horizon[1],
                                  scenario_id=spec.scenario_id)
    if spec.backend == "external":
        if results_dir is None:
            raise InputError("external backend needs a results directory")
        movement_map = spec.backend_config.get("movement_map")
        if movement_map is None:
            raise InputError("external backend needs backend_config.movement_map")
        programs = {iid: emit_tls_program(timeline,
                                          {int(k): v for k, v in movement_map.items()},
                                          tls_id=iid)
                    for iid in network.intersections}
        return simkit.run_external(
            vehicles, programs,
            command_template=spec.backend_config["command_template"],
            workdir=Path(results_dir) / spec.scenario_id / "run",
            timeout_s=float(spec.backend_config.get("timeout_s", 300.0)),
            scenario_id=spec.scenario_id)
    raise InputError(f"unknown backend {spec.backend!r}")


def _run_one(spec: ScenarioSpec, results_dir: str | None) -> dict:
    """Worker entry point: run one scenario, persist, report a row."""
    row = {"scenario_id": spec.scenario_id, "axes": spec.axes,
           "status": "ok", "error": None, "metrics": {}}
    try:
        result = execute_scenario(spec, results_dir)
        row["metrics"] = result.aggregates
    except Exception as exc:  # isolate-and-continue: grid cells are independent
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        result = None
    if results_dir is not None:
        out = Path(results_dir) / spec.scenario_id
        out.mkdir(parents=True, exist_ok=True)
        doc = {"row": row}
        if result is not None:
            doc["result"] = result.to_json()
        with open(out / "result.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    return row


def _check_backend_available(scenarios: Sequence[ScenarioSpec]) -> None:
    for spec in scenarios:
        if spec.backend == "external":
            template = spec.backend_config.get("command_template", "")
            if not template:
                raise BackendError("external backend without a command template")
            exe = shlex.split(template)[0]
            if shutil.which(exe) is None and not os.path.exists(exe):
                raise BackendError(f"backend executable not found: {exe}")
        elif spec.backend != "toy":
            raise BackendError(f"unknown backend {spec.backend!r}")


def run_parallel(scenarios: Sequence[ScenarioSpec], workers: int,
                 results_dir: str | Path | None = None,
                 resume: bool = False) -> SweepResult:
    """Run scenarios over a pull-based process pool.

    Individual failures become status=failed rows without aborting the
    sweep; an unavailable backend fails fast before anything launches.
    Rows come back sorted by scenario id, so the result does not depend
    on the worker count or completion order.  With ``resume``, scenarios
    that already have an ok result on disk are not re-executed.
    """
    if workers < 1:
        raise InputError("workers must be >= 1")
    _check_backend_available(scenarios)
    rdir = str(results_dir) if results_dir is not None else None

    rows: dict[str, dict] = {}
    todo = []
    for spec in scenarios:
        if resume and rdir is not None:
            path = Path(rdir) / spec.scenario_id / "result.json"
            if path.exists():
                prior = json.loads(path.read_text())["row"]
                if prior["status"] == "ok":
                    rows[spec.scenario_id] = prior
                    continue
        todo.append(spec)

    if workers == 1 or len(todo) <= 1:
        for spec in todo:
            rows[spec.scenario_id] = _run_one(spec, rdir)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_one, spec, rdir): spec for spec in todo}
            for fut in as_completed(futures):
                row = fut.result()
                rows[row["scenario_id"]] = row

    ordered = [rows[sid] for sid in sorted(rows)]
    return SweepResult(rows=ordered)


def select_best(result: SweepResult, metric: str = "mean_corridor_travel_time"
                ) -> tuple[str, dict]:
    """Best ok row by the named metric; ties break by scenario id."""
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}; registered: {sorted(METRICS)}")
    direction, extract = METRICS[metric]
    candidates = [(r, extract(r["metrics"])) for r in result.ok_rows()]
    candidates = [(r, v) for r, v in candidates if v is not None]
    if not candidates:
        raise InputError("no successful scenario rows to select from")
    sign = 1.0 if direction == "min" else -1.0
    best = min(candidates, key=lambda rv: (sign * rv[1], rv[0]["scenario_id"]))
    return best[0]["scenario_id"], best[0]


def write_sweep_outputs(result: SweepResult, out_dir: str | Path,
                        grid: ParameterGrid | None = None,
                        config: dict | None = None) -> None:
    """Persist the sweep manifest (JSON) and a flat results CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = result.to_manifest()
    if grid is not None:
        manifest["grid"] = {k: list(v) for k, v in grid.axes.items()}
    if config is not None:
        manifest["config"] = config
    with open(out / "sweep.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    axis_names = sorted({name for r in result.rows for name in r["axes"]})
    metric_names = ["mean_corridor_travel_time", "p95_travel_time",
                    "throughput", "incomplete", "total_delay"]
    with open(out / "results.csv", "w") as fh:
        fh.write(",".join(["scenario_id"] + axis_names + metric_names
                          + ["status", "error"]) + "\n")
        for r in result.rows:
            vals = [r["scenario_id"]]
            vals += [json.dumps(r["axes"].get(a)) if isinstance(r["axes"].get(a), list)
                     else str(r["axes"].get(a, "")) for a in axis_names]
            vals += [str(r["metrics"].get(m, "")) for m in metric_names]
            vals += [r["status"], r["error"] or ""]
            fh.write(",".join(v.replace(",", ";") for v in vals) + "\n")
