"""Batch experiments: seeded scenes and disturbance schedules, per-trial
records and aggregate metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .navigator import (
    WIND_CAP,
    DisturbanceEvent,
    DisturbanceSchedule,
    NavConfig,
    run_mission,
    write_log_csv,
)
from .scenes import SceneSpec, band_density, density, generate_scene

log = logging.getLogger(__name__)

TEMPLATES = ("none", "wind", "drag", "mixed")


def wind_pulses(rng: np.random.Generator, count: int = 3, t0: float = 1.0) -> list[DisturbanceEvent]:
    """Non-overlapping horizontal pulses, magnitude in [0.5, cap]."""
    events, t = [], t0 + rng.uniform(0.0, 2.0)
    for _ in range(count):
        dur = rng.uniform(1.0, 2.5)
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0.5, WIND_CAP)
        events.append(DisturbanceEvent(round(t, 2), round(t + dur, 2), "wind", (mag * np.cos(ang), mag * np.sin(ang), 0.0)))
        t += dur + rng.uniform(0.5, 2.0)
    return events


def drag_events(rng: np.random.Generator, count: int = 2, t0: float = 2.0) -> list[DisturbanceEvent]:
    """Stops with a horizontal displacement of 1 to 2 m."""
    events, t = [], t0 + rng.uniform(0.0, 3.0)
    for _ in range(count):
        dur = rng.uniform(0.3, 0.8)
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(1.0, 2.0)
        events.append(DisturbanceEvent(round(t, 2), round(t + dur, 2), "drag", (mag * np.cos(ang), mag * np.sin(ang), 0.0)))
        t += dur + rng.uniform(3.0, 5.0)
    return events


def make_schedule(template: str, seed: int) -> DisturbanceSchedule:
    if template not in TEMPLATES:
        raise ValueError(f"disturbance template must be one of {TEMPLATES}")
    rng = np.random.default_rng([seed, 1])
    events = []
    if template in ("wind", "mixed"):
        events += wind_pulses(rng)
    if template in ("drag", "mixed"):
        events += drag_events(rng)
    return DisturbanceSchedule(sorted(events, key=lambda e: e.t_start))


@dataclass
class BenchReport:
    trials: list[dict] = field(default_factory=list)
    timing: list[dict] = field(default_factory=list)  # wall-clock, kept apart from deterministic fields

    @staticmethod
    def _mean_std(values):
        v = np.asarray(values, float)
        if len(v) == 0:
            return None, None
        return float(v.mean()), float(v.std())

    def aggregates(self) -> dict:
        ok = [t for t in self.trials if t["success"]]
        tt = self._mean_std([t["travel_time"] for t in ok])
        dd = self._mean_std([t["distance"] for t in ok])
        return {
            "trials": len(self.trials),
            "successes": len(ok),
            "success_rate": len(ok) / len(self.trials) if self.trials else 0.0,
            "collisions": int(sum(t["collisions"] for t in self.trials)),
            "travel_time_mean": tt[0],
            "travel_time_std": tt[1],
            "distance_mean": dd[0],
            "distance_std": dd[1],
        }

    def timing_aggregates(self) -> dict:
        means = [t["planning_ms_mean"] for t in self.timing if t["planning_ms_mean"] is not None]
        pm = self._mean_std(means)
        stages = {}
        for t in self.timing:
            for k, v in t.get("stage_ms_mean", {}).items():
                stages.setdefault(k, []).append(v)
        return {
            "planning_ms_mean": pm[0],
            "planning_ms_std": pm[1],
            "stage_ms_mean": {k: float(np.mean(v)) for k, v in stages.items()},
        }

    def to_json(self, include_timing: bool = True) -> dict:
        out = {"aggregates": self.aggregates(), "trials": self.trials}
        if include_timing:
            out["timing"] = {"aggregates": self.timing_aggregates(), "trials": self.timing}
        return out

    def deterministic_bytes(self) -> bytes:
        return json.dumps(self.to_json(include_timing=False), sort_keys=True).encode()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def run_batch(
    spec: SceneSpec,
    n_trials: int,
    schedule_template: str = "none",
    config: NavConfig | None = None,
    out_dir: str | Path | None = None,
) -> BenchReport:
    """Trial i flies a fresh scene seeded ``spec.seed + i``; failures of any
    kind are recorded and the batch continues."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    report = BenchReport()
    for i in range(n_trials):
        seed = spec.seed + i
        trial_spec = SceneSpec(spec.extent, spec.style, spec.target_density, seed, spec.resolution, spec.min_gap, spec.corridor_radius, list(spec.forced))
        record = {"seed": seed, "success": False, "reason": "", "travel_time": None, "distance": None, "collisions": 0}
        timing = {"seed": seed, "planning_ms_mean": None, "stage_ms_mean": {}}
        try:
            scene = generate_scene(trial_spec)
            record["density"] = density(scene)
            record["band_density"] = band_density(scene)
            schedule = make_schedule(schedule_template, seed)
            mission = run_mission(scene, trial_spec.start, trial_spec.goal, schedule, seed, config)
            record.update(
                success=mission.success,
                reason=mission.reason,
                travel_time=mission.travel_time,
                distance=mission.distance,
                collisions=mission.collisions,
                replans=mission.replans,
                failed_replans=mission.failed_replans,
                fallback_replans=mission.fallback_replans,
            )
            t = mission.to_json()["timing"]
            timing.update(planning_ms_mean=t["planning_ms_mean"], planning_ms_std=t["planning_ms_std"], stage_ms_mean=t["stage_ms_mean"])
            if out_dir is not None:
                write_log_csv(mission.log, Path(out_dir) / f"trial_{seed}.csv")
        except Exception as exc:  # a broken trial must not abort the batch
            log.exception("trial %d failed", seed)
            record["reason"] = f"error: {type(exc).__name__}: {exc}"
        report.trials.append(record)
        report.timing.append(timing)
        log.info("trial %d: %s (%s)", seed, record["success"], record["reason"])
    return report
