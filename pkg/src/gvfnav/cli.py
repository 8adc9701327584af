"""Command-line entry point: scene generation, single missions, batches and
field slices."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import TEMPLATES, make_schedule, run_batch
from .field import build_guiding_field, write_field_slice
from .grid import Scene
from .navigator import DisturbanceSchedule, NavConfig, run_mission, write_log_csv
from .scenes import STYLES, SceneSpec, generate_scene, save_scene

log = logging.getLogger("gvfnav")


def _triple(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return tuple(parts)


def _config(path) -> NavConfig:
    return NavConfig.load(path) if path else NavConfig()


def read_trajectory(path) -> np.ndarray:
    """x, y, z columns of a CSV with a header row (mission logs qualify)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        try:
            cols = [header.index(k) for k in ("x", "y", "z")]
        except ValueError:
            raise ValueError(f"{path}: header needs x, y and z columns") from None
        return np.array([[float(row[c]) for c in cols] for row in reader if row])


# ---------------------------------------------------------------- commands


def cmd_scene_gen(args) -> int:
    spec = SceneSpec(args.extent, args.style, args.density, args.seed, args.resolution)
    scene = generate_scene(spec)
    save_scene(scene, args.out, spec)
    print(f"{args.out}: {len(scene.obstacles)} obstacles")
    return 0


def cmd_schedule_gen(args) -> int:
    make_schedule(args.template, args.seed).save(args.out)
    return 0


def cmd_run(args) -> int:
    data = json.loads(Path(args.scene).read_text())
    scene = Scene.from_json(data)
    start = args.start if args.start is not None else data.get("start")
    goal = args.goal if args.goal is not None else data.get("goal")
    if start is None or goal is None:
        raise SystemExit("--start and --goal are required when the scene file has none")
    schedule = DisturbanceSchedule.load(args.schedule) if args.schedule else None
    report = run_mission(scene, start, goal, schedule, args.seed, _config(args.config))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_log_csv(report.log, out / f"trial_{args.seed}.csv")
    report.save(out / f"report_{args.seed}.json")
    print(f"{report.reason}: {report.travel_time:.2f} s, {report.distance:.2f} m, {report.mean_planning_ms:.1f} ms/cycle")
    return 0 if report.success else 1


def cmd_bench(args) -> int:
    spec = SceneSpec(args.extent, args.style, args.density, args.seed, args.resolution)
    report = run_batch(spec, args.trials, args.disturbance, _config(args.config), args.log_dir)
    report.save(args.out)
    agg, tim = report.aggregates(), report.timing_aggregates()
    print(f"success {agg['successes']}/{agg['trials']}, collisions {agg['collisions']}")
    if agg["travel_time_mean"] is not None:
        print(f"travel {agg['travel_time_mean']:.2f} +- {agg['travel_time_std']:.2f} s, distance {agg['distance_mean']:.2f} +- {agg['distance_std']:.2f} m")
    if tim["planning_ms_mean"] is not None:
        stages = ", ".join(f"{k} {v:.1f}" for k, v in tim["stage_ms_mean"].items())
        print(f"planning {tim['planning_ms_mean']:.1f} +- {tim['planning_ms_std']:.1f} ms ({stages})")
    return 0


def cmd_field_slice(args) -> int:
    scene = Scene.load(args.scene)
    cfg = _config(args.config)
    resolution = args.resolution or scene.resolution
    field = build_guiding_field(read_trajectory(args.traj), resolution, args.margin, cfg.K1, cfg.K2, cfg.r)
    n = write_field_slice(field, args.z, args.spacing, args.out, scene.bounds_min[:2], scene.bounds_max[:2])
    print(f"{args.out}: {n} rows")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gvfnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_args(q, density_default):
        q.add_argument("--style", choices=STYLES, default="pillars-2d")
        q.add_argument("--density", type=float, default=density_default)
        q.add_argument("--extent", type=_triple, default=(30.0, 10.0, 3.0), help="x,y,z in meters")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--resolution", type=float, default=0.1)

    scene = sub.add_parser("scene").add_subparsers(dest="action", required=True)
    q = scene.add_parser("gen", help="generate a seeded scene")
    scene_args(q, 0.3)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_scene_gen)

    sched = sub.add_parser("schedule").add_subparsers(dest="action", required=True)
    q = sched.add_parser("gen", help="seeded disturbance schedule")
    q.add_argument("--template", choices=TEMPLATES, default="mixed")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_schedule_gen)

    q = sub.add_parser("run", help="fly one mission")
    q.add_argument("--scene", required=True)
    q.add_argument("--start", type=_triple)
    q.add_argument("--goal", type=_triple)
    q.add_argument("--schedule")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--config")
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("bench", help="batch of seeded missions")
    scene_args(q, 0.3)
    q.add_argument("--trials", type=int, default=20)
    q.add_argument("--disturbance", choices=TEMPLATES, default="none")
    q.add_argument("--config")
    q.add_argument("--log-dir", help="write trial_<seed>.csv logs here")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_bench)

    field = sub.add_parser("field").add_subparsers(dest="action", required=True)
    q = field.add_parser("slice", help="sample the guiding field of a trajectory on a plane")
    q.add_argument("--scene", required=True, help="slice covers the scene's x-y extent")
    q.add_argument("--traj", required=True, help="CSV with x, y, z columns")
    q.add_argument("--z", type=float, required=True)
    q.add_argument("--spacing", type=float, default=0.25)
    q.add_argument("--resolution", type=float, help="field resolution (default: the scene's)")
    q.add_argument("--margin", type=float, default=2.0)
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_field_slice)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
