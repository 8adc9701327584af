"""B-spline control-point refinement: smoothness + clearance penalty."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lbfgs
from .bspline import UniformBSpline
from .grid import DistanceField, smoothed_distance

log = logging.getLogger(__name__)

LAMBDA_SMOOTH = 5.0
LAMBDA_COLLISION = 10.0
D_THRESHOLD = 0.35

_THIRD_DIFF = np.array([-1.0, 3.0, -3.0, 1.0])


@dataclass
class OptProblem:
    spline: UniformBSpline
    esdf: DistanceField
    lambda_s: float = LAMBDA_SMOOTH
    lambda_c: float = LAMBDA_COLLISION
    d_thr: float = D_THRESHOLD

    def __post_init__(self):
        if self.n_free < 1:
            raise ValueError(
                f"no free control points: N={self.spline.n}, degree={self.spline.degree} (need N >= 2p)"
            )
        if self.lambda_s < 0 or self.lambda_c < 0:
            raise ValueError("weights must be nonnegative")

    @property
    def free_slice(self) -> slice:
        p = self.spline.degree
        return slice(p, self.spline.n - p + 1)

    @property
    def n_free(self) -> int:
        p = self.spline.degree
        return self.spline.n - 2 * p + 1

    def free_points(self) -> np.ndarray:
        return self.spline.control_points[self.free_slice].copy()

    def with_free(self, free: np.ndarray) -> np.ndarray:
        pts = self.spline.control_points.copy()
        pts[self.free_slice] = free.reshape(-1, pts.shape[1])
        return pts


@dataclass
class CollisionDiagnostics:
    out_of_bounds: int = 0
    active: int = 0


def smoothness_cost(problem: OptProblem, control_points=None):
    """Sum of squared third differences of the control points; gradient w.r.t. free points."""
    pts = problem.spline.control_points if control_points is None else control_points
    n = len(pts)
    if n < 4:
        return 0.0, np.zeros((problem.n_free, pts.shape[1]))
    diffs = pts[3:] - 3 * pts[2:-1] + 3 * pts[1:-2] - pts[:-3]
    value = float(np.sum(diffs * diffs))
    full = np.zeros_like(pts)
    for j, c in enumerate(_THIRD_DIFF):
        full[j : j + len(diffs)] += 2.0 * c * diffs
    return value, full[problem.free_slice]


def collision_cost(problem: OptProblem, control_points=None, diagnostics: CollisionDiagnostics | None = None):
    """Clearance penalty sum over free control points of (d - d_thr)^2 where d < d_thr.

    ``d`` is the blended local-quadratic distance of the obstacle field, so the
    returned gradient is its exact derivative. A point outside the field counts
    as d = 0 with a gradient pointing away from the field center.
    """
    pts = problem.spline.control_points if control_points is None else control_points
    free = pts[problem.free_slice]
    res = problem.esdf.resolution
    d, grad_d, status = smoothed_distance(problem.esdf, free, gate=problem.d_thr + res)
    grad = np.zeros_like(free)
    value = 0.0
    center = problem.esdf.origin + 0.5 * np.asarray(problem.esdf.dims) * res
    oob = status == 2
    active = (~oob) & (status == 0) & (d < problem.d_thr)
    if np.any(active):
        gap = d[active] - problem.d_thr
        value += float(np.sum(gap * gap))
        grad[active] = 2.0 * gap[:, None] * grad_d[active]
    if np.any(oob):
        value += float(oob.sum()) * problem.d_thr**2
        away = free[oob] - center
        norm = np.maximum(np.linalg.norm(away, axis=1, keepdims=True), 1e-12)
        grad[oob] = 2.0 * problem.d_thr * away / norm
    if diagnostics is not None:
        diagnostics.out_of_bounds = int(oob.sum())
        diagnostics.active = int(active.sum())
    return value, grad


def total_cost(problem: OptProblem, control_points=None):
    js, gs = smoothness_cost(problem, control_points)
    jc, gc = collision_cost(problem, control_points)
    return problem.lambda_s * js + problem.lambda_c * jc, problem.lambda_s * gs + problem.lambda_c * gc


@dataclass
class OptResult:
    spline: UniformBSpline
    status: str
    iterations: int
    history: list[dict] = field(default_factory=list)
    out_of_bounds: int = 0

    @property
    def ok(self) -> bool:
        return self.status != "line_search_failed"


def optimize(
    problem: OptProblem,
    max_iters: int = 100,
    grad_tol: float = 1e-4,
    rel_tol: float = 1e-8,
    memory: int = 8,
    record_history: bool = True,
) -> OptResult:
    """Refine the free control points with L-BFGS; boundary points are untouched."""
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    shape = problem.free_points().shape

    def fun(x):
        value, grad = total_cost(problem, problem.with_free(x))
        return value, grad.ravel()

    history: list[dict] = []

    def record(it, x, f, g, step):
        pts = problem.with_free(x)
        js, _ = smoothness_cost(problem, pts)
        jc, _ = collision_cost(problem, pts)
        history.append(
            {"iteration": it, "J_s": js, "J_c": jc, "J_total": f, "grad_norm": float(np.max(np.abs(g))), "step": step}
        )

    result = lbfgs.minimize(
        fun, problem.free_points().ravel(), memory, max_iters, grad_tol, rel_tol, record if record_history else None
    )
    if result.status == "line_search_failed":
        log.warning("line search failed after %d iterations; returning best iterate", result.iterations)
    diag = CollisionDiagnostics()
    final_pts = problem.with_free(result.x.reshape(shape))
    collision_cost(problem, final_pts, diag)
    return OptResult(problem.spline.with_control_points(final_pts), result.status, result.iterations, history, diag.out_of_bounds)


def write_diagnostics_csv(history: list[dict], path: str | Path) -> None:
    cols = ["iteration", "J_s", "J_c", "J_total", "grad_norm", "step"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow([row[c] for c in cols])
