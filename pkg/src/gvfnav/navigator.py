"""Closed-loop receding-horizon navigation on a simulated clock.

Every control tick the commanded velocity comes from the latest guiding field
at the current position. Perception and replanning run at fixed integer
multiples of the control tick, so a run is a pure function of its inputs.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bspline import PathPoints, fit_through, polyline_length, resample_polyline, sample_uniform
from .field import GuidingField, path_distance_field
from .global_path import PathQuery, local_goal, plan
from .grid import (
    Box,
    Cylinder,
    DistanceField,
    Scene,
    VoxelGrid,
    euclidean_distance_transform,
    rasterize_scene,
    smoothed_distance,
)
from .trajopt import OptProblem, OptResult, optimize

log = logging.getLogger(__name__)

WIND_CAP = 1.5
STAGES = ("esdf", "astar", "optimize", "edt", "field")
LOG_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "d_to_path", "event_active"]


@dataclass
class NavConfig:
    K1: float = 1.5
    K2: float = 1.5
    T_p: float = 0.2
    lambda_s: float = 5.0
    lambda_c: float = 10.0
    d_thr: float = 0.35
    r: float = 1.0
    resolution: float = 0.1
    cruise_speed: float = 2.0
    v_max: float = 2.5
    a_max: float = 3.0
    control_dt: float = 0.01
    perceive_dt: float = 0.05
    sense_radius: float = 5.0
    horizon: float = 7.0
    inflation: float = 0.2
    body_radius: float = 0.1
    capture_radius: float = 0.3
    timeout: float = 120.0
    max_failure_time: float = 3.0
    window_margin: float = 2.0
    window_margin_z: float = 1.0
    field_margin: float = 1.0
    control_spacing: float = 0.5
    opt_iters: int = 30
    min_clearance: float = 0.2
    preferred_clearance: float = 0.6  # planner pays extra for cells closer than this
    clearance_weight: float = 2.0
    heuristic_weight: float = 1.2
    rejoin_distance: float = 0.5  # farther than this from the path: plan back onto it
    rejoin_lead: float = 1.5  # rejoin this far ahead of the closest path point

    def __post_init__(self):
        for name in ("perceive_dt", "T_p"):
            ratio = getattr(self, name) / self.control_dt
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(f"{name} must be a positive multiple of control_dt")
        if self.cruise_speed <= 0 or self.v_max < self.cruise_speed:
            raise ValueError("need 0 < cruise_speed <= v_max")

    @property
    def perceive_every(self) -> int:
        return int(round(self.perceive_dt / self.control_dt))

    @property
    def replan_every(self) -> int:
        return int(round(self.T_p / self.control_dt))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "NavConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "NavConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- #
# disturbances
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DisturbanceEvent:
    t_start: float
    t_end: float
    kind: str  # "wind" or "drag"
    vector: tuple[float, float, float]  # acceleration (wind) or displacement (drag)

    def __post_init__(self):
        if self.kind not in ("wind", "drag"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not self.t_end > self.t_start >= 0:
            raise ValueError("need 0 <= t_start < t_end")
        if self.kind == "wind" and np.linalg.norm(self.vector) > WIND_CAP + 1e-12:
            raise ValueError(f"wind magnitude exceeds {WIND_CAP} m/s^2")


@dataclass
class DisturbanceSchedule:
    events: list[DisturbanceEvent] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "events": [
                {"t_start": e.t_start, "t_end": e.t_end, "kind": e.kind, "vector": list(e.vector)} for e in self.events
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "DisturbanceSchedule":
        return cls(
            [DisturbanceEvent(float(e["t_start"]), float(e["t_end"]), e["kind"], tuple(map(float, e["vector"]))) for e in data.get("events", [])]
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "DisturbanceSchedule":
        return cls.from_json(json.loads(Path(path).read_text()))


def _tick_window(event: DisturbanceEvent, dt: float) -> tuple[int, int]:
    return int(round(event.t_start / dt)), int(round(event.t_end / dt))


# --------------------------------------------------------------------------- #
# state
# --------------------------------------------------------------------------- #


@dataclass
class NavState:
    position: np.ndarray
    velocity: np.ndarray
    online_grid: VoxelGrid
    true_scene: Scene
    goal: np.ndarray
    cruise_speed: float = 2.0
    v_max: float = 2.5
    clock: float = 0.0


@dataclass
class CycleRecord:
    t: float
    ok: bool
    reason: str = ""
    fallback: bool = False
    stages_ms: dict = field(default_factory=dict)

    @property
    def total_ms(self) -> float:
        return float(sum(self.stages_ms.get(s, 0.0) for s in STAGES))


class _Collider:
    """Vectorized clearance test of a sphere against the true primitives."""

    def __init__(self, scene: Scene, radius: float):
        boxes = [o for o in scene.obstacles if isinstance(o, Box)]
        cyls = [o for o in scene.obstacles if isinstance(o, Cylinder)]
        self.lo = np.array([b.min for b in boxes], float).reshape(-1, 3)
        self.hi = np.array([b.max for b in boxes], float).reshape(-1, 3)
        self.cyl = np.array([[*c.center, c.radius, c.z_min, c.z_max] for c in cyls], float).reshape(-1, 5)
        self.bmin, self.bmax = scene.bounds_min, scene.bounds_max
        self.radius = radius

    def clearance(self, p) -> float:
        """Distance from ``p`` to the nearest obstacle surface or world boundary."""
        best = float(np.min(np.concatenate([p - self.bmin, self.bmax - p])))
        if len(self.lo):
            gap = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
            best = min(best, float(np.sqrt((gap * gap).sum(axis=1)).min()))
        if len(self.cyl):
            c = self.cyl
            dr = np.maximum(np.hypot(p[0] - c[:, 0], p[1] - c[:, 1]) - c[:, 2], 0.0)
            dz = np.maximum(np.maximum(c[:, 3] - p[2], p[2] - c[:, 4]), 0.0)
            best = min(best, float(np.hypot(dr, dz).min()))
        return best

    def collides(self, p) -> bool:
        return self.clearance(p) <= self.radius


def _polyline_distance(points: np.ndarray, p: np.ndarray) -> float:
    a = points[:-1]
    ab = points[1:] - a
    t = np.clip(((p - a) * ab).sum(axis=1) / np.maximum((ab * ab).sum(axis=1), 1e-300), 0.0, 1.0)
    return float(np.sqrt((((a + t[:, None] * ab) - p) ** 2).sum(axis=1)).min())


# --------------------------------------------------------------------------- #
# navigator
# --------------------------------------------------------------------------- #


class Navigator:
    def __init__(
        self,
        scene: Scene,
        start,
        goal,
        config: NavConfig | None = None,
        schedule: DisturbanceSchedule | None = None,
    ):
        self.config = config or NavConfig()
        self.schedule = schedule or DisturbanceSchedule()
        cfg = self.config
        self.truth = rasterize_scene(scene, resolution=cfg.resolution)
        self.collider = _Collider(scene, cfg.body_radius)
        start = np.asarray(start, float)
        if self.collider.collides(start):
            raise ValueError(f"start {start} is in collision")
        self.state = NavState(
            start.copy(),
            np.zeros(3),
            self.truth.same_geometry(),
            scene,
            np.asarray(goal, float),
            cfg.cruise_speed,
            cfg.v_max,
        )
        self.known = np.zeros(self.truth.dims, dtype=bool)
        self.field: GuidingField | None = None
        self.global_path: np.ndarray | None = None
        self.reference: np.ndarray | None = None  # path the vehicle is meant to be on
        self.rejoining = False
        self.last_problem: OptProblem | None = None  # optimizer input and output of the latest good cycle
        self.last_result: OptResult | None = None
        self.cycles: list[CycleRecord] = []
        self.last_ok = 0.0
        self.tick = 0
        self._axes = [self.truth.cell_centers(a) for a in range(3)]
        self._drag_windows = [(_tick_window(e, cfg.control_dt), e) for e in self.schedule.events if e.kind == "drag"]
        self._wind_windows = [(_tick_window(e, cfg.control_dt), np.asarray(e.vector, float)) for e in self.schedule.events if e.kind == "wind"]

    # ---------------------------------------------------------------- perceive
    def perceive(self) -> None:
        """Copy true occupied cells whose centers lie within the sensing radius."""
        cfg, g = self.config, self.truth
        p = self.state.position
        lo = np.maximum(np.floor((p - cfg.sense_radius - g.origin) / g.resolution).astype(int), 0)
        hi = np.minimum(np.ceil((p + cfg.sense_radius - g.origin) / g.resolution).astype(int) + 1, g.dims)
        if np.any(hi <= lo):
            return
        xs, ys, zs = (self._axes[a][lo[a] : hi[a]] - p[a] for a in range(3))
        inside = (xs[:, None, None] ** 2 + ys[None, :, None] ** 2 + zs[None, None, :] ** 2) <= cfg.sense_radius**2
        sl = tuple(slice(lo[a], hi[a]) for a in range(3))
        self.state.online_grid.occupancy[sl] |= inside & g.occupancy[sl]
        self.known[sl] |= inside

    # ------------------------------------------------------------------ replan
    def _window(self, a, b):
        """Padded sub-grid of the online map around points ``a`` and ``b``; pad
        cells on faces that coincide with the world boundary are occupied."""
        cfg, g = self.config, self.state.online_grid
        pad = np.array([cfg.window_margin, cfg.window_margin, cfg.window_margin_z])
        lo = np.maximum(np.floor((np.minimum(a, b) - pad - g.origin) / g.resolution).astype(int), 0)
        hi = np.minimum(np.ceil((np.maximum(a, b) + pad - g.origin) / g.resolution).astype(int), g.dims)
        sub = g.occupancy[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        padded = np.zeros(tuple(np.asarray(sub.shape) + 2), dtype=bool)
        padded[1:-1, 1:-1, 1:-1] = sub
        for ax in range(3):
            idx = [slice(None)] * 3
            if lo[ax] == 0:
                idx[ax] = 0
                padded[tuple(idx)] = True
            if hi[ax] == g.dims[ax]:
                idx[ax] = -1
                padded[tuple(idx)] = True
        return VoxelGrid(g.origin + (lo - 1) * g.resolution, g.resolution, padded)

    def _rejoin_tail(self):
        """The reference path from a point ``rejoin_lead`` ahead of the
        vehicle's closest point onward, while the vehicle is off that path.
        Rejoining starts beyond ``rejoin_distance`` and lasts until the vehicle
        is back within two cells of the reference."""
        cfg = self.config
        if self.reference is None:
            return None
        pts = self.reference
        d = np.linalg.norm(pts - self.state.position, axis=1)
        i = int(np.argmin(d))
        self.rejoining = d[i] > (2 * cfg.resolution if self.rejoining else cfg.rejoin_distance)
        if not self.rejoining:
            return None
        along = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts[i:], axis=0), axis=1))])
        j = i + int(np.searchsorted(along, cfg.rejoin_lead))
        if j >= len(pts) - 2:
            self.rejoining = False
            return None
        return pts[j:]

    def _local_goal(self) -> np.ndarray:
        cfg, st = self.config, self.state
        lg = local_goal(st.goal, st.position, cfg.horizon, self.global_path, grid=st.online_grid)
        margin = cfg.inflation + cfg.resolution
        return np.clip(lg, st.true_scene.bounds_min + margin, st.true_scene.bounds_max - margin)

    @staticmethod
    def _esdf(window: VoxelGrid) -> DistanceField:
        if window.occupancy.any():
            return euclidean_distance_transform(window)
        return DistanceField.constant(window.origin, window.resolution, window.dims, 1e3)

    def replan(self) -> CycleRecord:
        cfg, st = self.config, self.state
        rec = CycleRecord(st.clock, False)
        try:
            t0 = time.perf_counter()
            tail = self._rejoin_tail()
            if tail is not None:
                lg = tail[0]
                window = self._window(np.minimum(st.position, tail.min(axis=0)), np.maximum(st.position, tail.max(axis=0)))
            else:
                lg = self._local_goal()
                window = self._window(st.position, lg)
            esdf = self._esdf(window)
            blocked = esdf.values <= cfg.inflation + 1e-9
            if tail is not None and blocked[tuple(window.index_of(tail).T)].any():
                # the old path runs into newly seen obstacles: plan afresh
                tail = None
                self.rejoining = False
                lg = self._local_goal()
                window = self._window(st.position, lg)
                esdf = self._esdf(window)
                blocked = esdf.values <= cfg.inflation + 1e-9
            t1 = time.perf_counter()
            near = np.clip((cfg.preferred_clearance - esdf.values) / cfg.preferred_clearance, 0.0, 1.0)
            waypoints = plan(
                window,
                PathQuery(st.position, lg, cfg.inflation),
                blocked=blocked,
                penalty=cfg.clearance_weight * near,
                shortcut_blocked=esdf.values <= cfg.preferred_clearance,
                weight=cfg.heuristic_weight,
            )
            if tail is not None:
                waypoints = np.vstack([waypoints, tail[1:]])
            if len(waypoints) < 2:
                raise ValueError("planner returned a single point")
            t2 = time.perf_counter()
            length = polyline_length(waypoints)
            dense = resample_polyline(waypoints, max(int(np.ceil(length / cfg.resolution)) + 1, 12))
            n_ctrl = max(8, int(np.ceil(length / cfg.control_spacing)) + 3)
            spline = fit_through(dense, 3, n_ctrl, time_scale=length / cfg.cruise_speed / (n_ctrl - 3))
            problem = OptProblem(spline, esdf, cfg.lambda_s, cfg.lambda_c, cfg.d_thr)
            result = optimize(problem, max_iters=cfg.opt_iters, record_history=False)
            path = sample_uniform(result.spline, 0.5 * cfg.resolution / cfg.cruise_speed)
            d, _, status = smoothed_distance(esdf, path.points, gate=0.0)
            if np.any(status == 2) or d.min() < cfg.min_clearance:
                rec.fallback = True
                spacing = 0.5 * cfg.resolution
                path = PathPoints(resample_polyline(waypoints, max(int(np.ceil(length / spacing)) + 1, 3)), spacing / cfg.cruise_speed)
            t3 = time.perf_counter()
            u = path_distance_field(path.points, cfg.resolution, cfg.field_margin, cfg.r)
            t4 = time.perf_counter()
            new_field = GuidingField(path, u, cfg.K1, cfg.K2, cfg.r)
            t5 = time.perf_counter()
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            rec.reason = f"{type(exc).__name__}: {exc}"
            log.debug("replan failed at t=%.2f: %s", st.clock, rec.reason)
            self.cycles.append(rec)
            return rec
        rec.ok = True
        rec.stages_ms = {
            "esdf": (t1 - t0) * 1e3,
            "astar": (t2 - t1) * 1e3,
            "optimize": (t3 - t2) * 1e3,
            "edt": (t4 - t3) * 1e3,
            "field": (t5 - t4) * 1e3,
        }
        self.field = new_field
        if not self.rejoining:
            self.reference = path.points
        self.global_path = waypoints
        self.last_problem, self.last_result = problem, result
        self.last_ok = st.clock
        self.cycles.append(rec)
        return rec

    # -------------------------------------------------------------------- step
    def _drag_at(self, tick):
        for (a, b), e in self._drag_windows:
            if a <= tick < b:
                return (a, b), e
        return None

    def _event_active(self, tick) -> bool:
        return self._drag_at(tick) is not None or any(a <= tick < b for (a, b), _ in self._wind_windows)

    def _safe_displacement(self, p, disp) -> np.ndarray:
        """Shrink a displacement by halves until the target keeps clearance."""
        need = self.config.body_radius + self.config.inflation
        disp = np.asarray(disp, float)
        for _ in range(6):
            if self.collider.clearance(p + disp) > need:
                return p + disp
            disp = 0.5 * disp
        return p.copy()

    def command(self) -> np.ndarray:
        """Velocity command from the latest field at the current position."""
        st = self.state
        if self.field is None:
            return np.zeros(3)
        chi, _, status = self.field.guide_many(self.field.clamp(st.position))
        if status[0] >= 2:
            return np.zeros(3)
        norm = np.linalg.norm(chi[0])
        return st.cruise_speed * chi[0] / max(norm, 1e-9)

    def step(self) -> None:
        cfg, st = self.config, self.state
        dt = cfg.control_dt
        drag = self._drag_at(self.tick)
        if drag is not None:
            (a, _), event = drag
            if self.tick == a:
                st.position = self._safe_displacement(st.position, event.vector)
            st.velocity = np.zeros(3)
        else:
            v_cmd = self.command()
            dv = v_cmd - st.velocity
            n = np.linalg.norm(dv)
            if n > cfg.a_max * dt:
                dv *= cfg.a_max * dt / n
            v = st.velocity + dv
            for (a, b), w in self._wind_windows:
                if a <= self.tick < b:
                    v = v + w * dt
            speed = np.linalg.norm(v)
            if speed > st.v_max:
                v = v * (st.v_max / speed)
            st.velocity = v
            st.position = st.position + v * dt
        self.tick += 1
        st.clock = self.tick * dt

    def d_to_path(self) -> float:
        if self.field is None:
            return float("nan")
        return _polyline_distance(self.field.points, self.state.position)


# --------------------------------------------------------------------------- #
# missions
# --------------------------------------------------------------------------- #


@dataclass
class MissionReport:
    success: bool
    reason: str
    travel_time: float
    distance: float
    seed: int
    replans: int
    failed_replans: int
    fallback_replans: int
    collisions: int
    planning_ms: list = field(default_factory=list)
    stage_ms: dict = field(default_factory=dict)
    log: np.ndarray = field(default_factory=lambda: np.zeros((0, len(LOG_COLUMNS))))

    @property
    def mean_planning_ms(self) -> float:
        return float(np.mean(self.planning_ms)) if self.planning_ms else float("nan")

    def to_json(self, include_timing: bool = True) -> dict:
        out = {
            "success": self.success,
            "reason": self.reason,
            "travel_time": self.travel_time,
            "distance": self.distance,
            "seed": self.seed,
            "replans": self.replans,
            "failed_replans": self.failed_replans,
            "fallback_replans": self.fallback_replans,
            "collisions": self.collisions,
        }
        if include_timing:
            pt = np.asarray(self.planning_ms)
            out["timing"] = {
                "planning_ms_mean": float(pt.mean()) if len(pt) else None,
                "planning_ms_std": float(pt.std()) if len(pt) else None,
                "planning_ms": list(map(float, pt)),
                "stage_ms_mean": {k: float(np.mean(v)) for k, v in self.stage_ms.items() if len(v)},
            }
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def write_log_csv(rows: np.ndarray, path: str | Path) -> int:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])
    return len(rows)


def run_mission(
    scene: Scene,
    start,
    goal,
    schedule: DisturbanceSchedule | None = None,
    seed: int = 0,
    config: NavConfig | None = None,
) -> MissionReport:
    """Fly from ``start`` until the goal is captured, a collision occurs, the
    replanner fails for too long, or the timeout elapses."""
    return fly(Navigator(scene, start, goal, config, schedule), seed)


def fly(nav: Navigator, seed: int = 0) -> MissionReport:
    """Run the tick loop on a fresh navigator; it is left in its final state."""
    cfg, st = nav.config, nav.state
    rows = []
    reason, success, collisions = "timeout", False, 0
    max_ticks = int(round(cfg.timeout / cfg.control_dt))
    while True:
        k = nav.tick
        if k % cfg.perceive_every == 0:
            nav.perceive()
        if k % cfg.replan_every == 0:
            nav.replan()
        rows.append([st.clock, *st.position, *st.velocity, nav.d_to_path(), float(nav._event_active(k))])
        if np.linalg.norm(st.position - st.goal) <= cfg.capture_radius:
            reason, success = "captured", True
            break
        if k >= max_ticks:
            break
        if st.clock - nav.last_ok > cfg.max_failure_time:
            reason = "replan_failure"
            break
        nav.step()
        if nav.collider.collides(st.position):
            collisions = 1
            reason = "collision"
            rows.append([st.clock, *st.position, *st.velocity, nav.d_to_path(), float(nav._event_active(nav.tick))])
            break
    log_rows = np.array(rows, float)
    ok = [c for c in nav.cycles if c.ok]
    return MissionReport(
        success,
        reason,
        float(log_rows[-1, 0]),
        polyline_length(log_rows[:, 1:4]),
        int(seed),
        len(nav.cycles),
        sum(1 for c in nav.cycles if not c.ok),
        sum(1 for c in ok if c.fallback),
        collisions,
        [c.total_ms for c in ok],
        {s: [c.stages_ms[s] for c in ok] for s in STAGES},
        log_rows,
    )
