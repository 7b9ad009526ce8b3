"""Command-line entry point.

Subcommands: masks, ingest, analyze, detect, sweep, synth.  Exit codes:
0 success (no flags raised), 2 usage or input error, 3 interruption
flags raised, 4 backend failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import analytics, detect, ingest, masks, orchestrate, signal, simkit, synth
from .config import Config, load_config
from .errors import BackendError, InputError
from .geo import GeoPoint

WEEK_S = 604800.0

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FLAGS = 3
EXIT_BACKEND = 4


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise InputError(f"bad time {text!r}: use epoch seconds or ISO 8601") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_window(text: str) -> tuple[float, float]:
    if ".." not in text:
        raise InputError("window must look like start..end")
    a, b = text.split("..", 1)
    start, end = _parse_time(a), _parse_time(b)
    if not start < end:
        raise InputError("window start must be before end")
    return start, end


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"bad JSON in {p}: {exc}") from exc


def _load_masks(path: str) -> masks.MaskSet:
    return masks.mask_set_from_geojson(_load_json(path))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_masks(args, cfg: Config) -> int:
    roads = masks.read_roads_geojson(_load_json(args.roads))
    centers = masks.read_intersections_geojson(_load_json(args.intersections))
    if not args.width > 0 or not args.radius > 0:
        raise InputError("--width and --radius must be positive")
    ms = masks.build_mask_set(roads, centers, half_width=args.width,
                              radius=args.radius)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(masks.mask_set_to_geojson(ms), fh, indent=2, sort_keys=True)
    print(f"wrote {args.out}: {len(ms.intersection_masks())} intersection, "
          f"{len(ms.corridor_masks())} corridor masks")
    return EXIT_OK


def cmd_ingest(args, cfg: Config) -> int:
    ms = _load_masks(args.masks)
    result = ingest.load_trajectories(args.trajectories)
    filtered = ingest.filter_journeys(result.journeys, min_duration=cfg.min_duration_s)
    fragments = ingest.clip_to_masks(filtered, ms, min_length=cfg.min_clip_length_m)
    store = ingest.JourneyStore(args.store)
    n = store.put(fragments)
    if args.rejects:
        ingest.write_rejects(args.rejects, result.rejects)
    print(f"loaded {len(result.journeys)} journeys "
          f"({len(result.rejects)} rejected rows), kept {len(filtered)} after "
          f"filtering, stored {n} clipped fragments under {args.store}")
    return EXIT_OK


def cmd_analyze(args, cfg: Config) -> int:
    ms = _load_masks(args.masks)
    mask = ms.for_intersection(args.intersection)
    window = _parse_window(args.window)
    store = ingest.JourneyStore(args.store)
    fragments = store.load_window(window[0], window[1], intersection=mask.id)
    # Bundle layout: <out>/<intersection>/<start>-<end>/{stops,od,...}.csv
    out = Path(args.out) / args.intersection / f"{window[0]:.0f}-{window[1]:.0f}"
    if not fragments:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump({"intersection": args.intersection, "window": list(window),
                       "empty": True, "config": cfg.to_dict()}, fh, indent=2,
                      sort_keys=True)
        print(f"no journeys in window; empty report at {out}")
        return EXIT_OK
    report = analytics.report_bundle(
        fragments, mask, args.intersection, window, out,
        config=cfg.to_dict(), include_gapped=cfg.include_gapped, plots=args.plots,
        stop_speed_threshold=cfg.stop_speed_threshold_mps,
        stop_min_duration=cfg.stop_min_duration_s,
        queue_min_stop=cfg.queue_min_stop_s,
        braking_threshold_g=cfg.braking_threshold_g,
        braking_sustain=cfg.braking_sustain_s)
    print(f"analyzed {report['n_fragments']} fragments "
          f"({report['n_movements']} movements, {report['n_stops']} stops, "
          f"{report['n_braking_events']} braking events) -> {out}")
    return EXIT_OK


def _baseline_windows(window: tuple[float, float], spec: str) -> list[tuple[float, float]]:
    start, end = window
    if spec == "auto":
        return [(start - WEEK_S, end - WEEK_S),
                (start - 2 * WEEK_S, end - 2 * WEEK_S)]
    out = []
    for part in spec.split(","):
        s = _parse_time(part)
        out.append((s, s + (end - start)))
    return out


def _detect_abod(args, cfg, mask, window, store) -> tuple[dict, int]:
    current = store.load_window(window[0], window[1], intersection=mask.id)
    if not current:
        return {"flags": [], "scores": [], "note": "no journeys in window"}, EXIT_OK
    cohort_names = ("week_minus_1", "week_minus_2")
    vectors = [detect.featurize(f, cohort="current") for f in current]
    missing = 0
    for (bstart, bend), cohort in zip(_baseline_windows(window, args.baselines),
                                      cohort_names):
        frags = store.load_window(bstart, bend, intersection=mask.id)
        if not frags:
            missing += 1
            print(f"warning: no baseline journeys in [{bstart}, {bend})",
                  file=sys.stderr)
            continue
        vectors.extend(detect.featurize(f, cohort=cohort) for f in frags)
    if missing == 2:
        raise InputError("no baseline windows available; ABOD needs context")
    if len(vectors) < 3:
        raise InputError("too few journeys to score (need at least 3)")
    X = detect.normalize(vectors, features=tuple(cfg.features),
                         pool=cfg.normalize_pool)
    scores = detect.abof_scores(X, ids=[v.journey_id for v in vectors],
                                k=cfg.abod_neighbors)
    cohorts = [v.cohort for v in vectors]
    scores = detect.flag_outliers(scores, contamination=args.contamination,
                                  cohorts=cohorts)
    flags = sorted(s.journey_id for s in scores if s.flagged)
    doc = {"flags": flags,
           "scores": [{"journey_id": s.journey_id, "abof": s.abof,
                       "flagged": s.flagged, "cohort": c}
                      for s, c in zip(scores, cohorts)]}
    return doc, (EXIT_FLAGS if flags else EXIT_OK)


def _detect_atspm(args, cfg, window) -> tuple[dict, int]:
    paths = args.atspm or cfg.atspm_paths
    if not paths:
        raise InputError("ATSPM method needs --atspm files or config atspm_paths")
    if not cfg.detector_map:
        raise InputError("ATSPM method needs a detector_map in the config")

    def table(win):
        res = ingest.load_atspm(paths, args.intersection, win)
        return ingest.phase_volumes(res.events, cfg.detector_map,
                                    detector_on_code=cfg.detector_on_code)

    current = table(window)
    baselines = [table(w) for w in _baseline_windows(window, args.baselines)]
    baselines = [b for b in baselines if b.counts]
    deviations, no_baseline = detect.atspm_interruption(
        current, baselines, threshold=cfg.atspm_threshold)
    flags = [d for d in deviations if d.flagged]
    doc = {"flags": [{"phase": d.phase, "hour": d.hour, "score": d.score}
                     for d in flags],
           "scores": [dataclasses.asdict(d) for d in deviations],
           "no_baseline": [{"phase": p, "hour": h} for p, h in no_baseline]}
    return doc, (EXIT_FLAGS if flags else EXIT_OK)


def cmd_detect(args, cfg: Config) -> int:
    window = _parse_window(args.window)
    if args.method == "abod":
        ms = _load_masks(args.masks)
        mask = ms.for_intersection(args.intersection)
        store = ingest.JourneyStore(args.store)
        doc, code = _detect_abod(args, cfg, mask, window, store)
        params = {"method": "abod", "k": cfg.abod_neighbors,
                  "contamination": args.contamination,
                  "features": cfg.features, "normalize_pool": cfg.normalize_pool}
    else:
        doc, code = _detect_atspm(args, cfg, window)
        params = {"method": "atspm", "threshold": cfg.atspm_threshold,
                  "detector_on_code": cfg.detector_on_code}
    out_doc = {"intersection": args.intersection, "window": list(window),
               "method": args.method, "params": params,
               "config": cfg.to_dict(), **doc}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(out_doc, fh, indent=2, sort_keys=True)
    n = len(out_doc["flags"])
    print(f"{args.method}: {n} flag(s) raised")
    return code


def cmd_sweep(args, cfg: Config) -> int:
    grid_doc = _load_json(args.grid)
    base = grid_doc.get("base") or {}
    if args.network:
        base["network"] = _load_json(args.network)
    if "network" not in base:
        raise InputError("sweep needs a network (grid base.network or --network)")
    if args.backend:
        base["backend"] = args.backend
    if base.get("backend") == "external" and cfg.external_command:
        base.setdefault("backend_config", {})
        base["backend_config"].setdefault("command_template", cfg.external_command)
        base["backend_config"].setdefault("timeout_s", cfg.external_timeout_s)
    grid = orchestrate.ParameterGrid(axes={
        k: tuple(v) for k, v in grid_doc["axes"].items()})
    scenarios, dropped = orchestrate.expand_grid(grid, base)
    if dropped:
        print(f"dropped {len(dropped)} invalid plan combination(s)")
    out = Path(args.out)
    result = orchestrate.run_parallel(scenarios, workers=args.workers,
                                      results_dir=out / "results",
                                      resume=args.resume)
    result.dropped = dropped
    orchestrate.write_sweep_outputs(result, out, grid=grid, config=cfg.to_dict())
    ok = result.ok_rows()
    print(f"sweep: {len(ok)}/{len(result.rows)} scenarios ok -> {out}")
    if not ok:
        return EXIT_BACKEND
    best_id, row = orchestrate.select_best(result, metric=args.metric)
    print(f"best by {args.metric}: {best_id} "
          f"({args.metric}={row['metrics'].get(args.metric)}, axes={row['axes']})")
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    params = _load_json(args.params) if args.params else {}
    if args.seed is not None:
        params["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "trajectories":
        spec_kwargs = {}
        plan_kwargs = {}
        for key, value in params.items():
            if key in ("cycle_length", "through_split", "left_split"):
                plan_kwargs[key] = float(value)
            elif key == "origin":
                spec_kwargs["origin"] = GeoPoint(*value)
            elif key in ("seed", "braking_injections", "blockage_count"):
                spec_kwargs[key] = int(value)
            elif key in ("t0", "duration_s", "blockage_dwell_s", "approach_len_m",
                         "exit_len_m", "sample_interval_s", "depart_margin_s"):
                spec_kwargs[key] = float(value)
            elif key in ("demand", "intersection_id"):
                spec_kwargs[key] = value
            else:
                raise InputError(f"unknown trajectories param {key!r}")
        if plan_kwargs:
            spec_kwargs["plan"] = synth.default_plan(**plan_kwargs)
        spec = synth.TrafficSpec(**spec_kwargs)
        journeys, truth = synth.generate_trajectories(spec)
        synth.write_trajectories_csv(out / "trajectories.csv", journeys)
        with open(out / "truth.json", "w") as fh:
            json.dump(truth, fh, indent=2, sort_keys=True)
        scene = synth.intersection_scene(spec)
        with open(out / "masks.geojson", "w") as fh:
            json.dump(masks.mask_set_to_geojson(scene), fh, indent=2, sort_keys=True)
        print(f"wrote {len(journeys)} journeys to {out}")
    elif args.kind == "atspm":
        volumes = {int(k): int(v) for k, v in (params.get("volumes") or
                                               {"2": 120, "4": 60, "6": 110, "8": 50}).items()}
        events = synth.generate_atspm(
            intersection_id=params.get("intersection_id", "I1"),
            volumes=volumes, t0=float(params.get("t0", 1_700_000_000.0)),
            duration_s=float(params.get("duration_s", 3600.0)),
            detector_by_phase={int(k): int(v) for k, v in
                               (params.get("detector_by_phase") or {}).items()} or None,
            seed=int(params.get("seed", 0)),
            detector_on_code=int(params.get("detector_on_code", cfg.detector_on_code)))
        synth.write_atspm_csv(out / "atspm.csv", events)
        with open(out / "truth.json", "w") as fh:
            json.dump({"volumes": {str(k): v for k, v in volumes.items()}},
                      fh, indent=2, sort_keys=True)
        print(f"wrote {len(events)} events to {out}")
    else:  # network
        if params.get("layout", "cross") == "corridor":
            net = synth.corridor_network(
                n_intersections=int(params.get("n_intersections", 3)),
                spacing=float(params.get("spacing", 600.0)))
        else:
            net = synth.cross_network(
                approach_len=float(params.get("approach_len", 500.0)),
                pocket=params.get("pocket", 2))
        with open(out / "network.json", "w") as fh:
            json.dump(simkit.network_to_json(net), fh, indent=2, sort_keys=True)
        plan = synth.default_plan(float(params.get("cycle_length", 120.0)))
        with open(out / "plan.json", "w") as fh:
            json.dump(signal.plan_to_json(plan), fh, indent=2, sort_keys=True)
        with open(out / "movement_map.json", "w") as fh:
            json.dump({str(p): heads for p, heads in
                       synth.default_movement_map(net).items()}, fh, indent=2,
                      sort_keys=True)
        print(f"wrote network with {len(net.movements)} movements to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficlens",
        description="Intersection analytics, interruption detection, and "
                    "signal-timing sweeps from probe trajectories and "
                    "controller logs.")
    parser.add_argument("--config", help=f"config JSON path (default: ${ENV_HINT})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("masks", help="build corridor and intersection masks")
    p.add_argument("--roads", required=True, help="GeoJSON LineString collection")
    p.add_argument("--intersections", required=True,
                   help="GeoJSON Point collection with 'id' properties")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=float, default=35.0,
                   help="corridor buffer distance in meters (default 35)")
    p.add_argument("--radius", type=float, default=125.0,
                   help="intersection mask radius in meters (default 125)")

    p = sub.add_parser("ingest", help="load, filter, clip, and store trajectories")
    p.add_argument("--trajectories", nargs="+", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--rejects", help="write rejected rows to this NDJSON file")

    p = sub.add_parser("analyze", help="descriptive report for one intersection-window")
    p.add_argument("--store", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--intersection", required=True)
    p.add_argument("--window", required=True, help="start..end (epoch or ISO)")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true", help="also write SVG histograms")

    p = sub.add_parser("detect", help="interruption detection")
    p.add_argument("--store")
    p.add_argument("--masks")
    p.add_argument("--intersection", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--method", choices=("abod", "atspm"), default="abod")
    p.add_argument("--baselines", default="auto",
                   help="'auto' (1 and 2 weeks prior) or comma-separated starts")
    p.add_argument("--contamination", type=float, default=None)
    p.add_argument("--atspm", nargs="*", help="ATSPM event files (atspm method)")
    p.add_argument("--out", help="write detector JSON here")

    p = sub.add_parser("sweep", help="expand a grid and run simulations in parallel")
    p.add_argument("--grid", required=True, help="grid JSON (axes + base)")
    p.add_argument("--network", help="network JSON (overrides grid base.network)")
    p.add_argument("--backend", choices=("toy", "external"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--metric", default="mean_corridor_travel_time")
    p.add_argument("--out", default="sweep_out")

    p = sub.add_parser("synth", help="generate synthetic data")
    p.add_argument("kind", choices=("trajectories", "atspm", "network"))
    p.add_argument("--params", help="params JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    return parser


ENV_HINT = "TRAFFICLENS_CONFIG"

COMMANDS = {"masks": cmd_masks, "ingest": cmd_ingest, "analyze": cmd_analyze,
            "detect": cmd_detect, "sweep": cmd_sweep, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = load_config(args.config)
        if hasattr(args, "contamination") and args.contamination is None:
            args.contamination = cfg.contamination
        return COMMANDS[args.command](args, cfg)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InputError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
