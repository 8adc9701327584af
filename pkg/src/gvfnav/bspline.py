"""Uniform clamped B-splines: evaluation, fitting and uniform sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    pass


def clamped_uniform_knots(n_control: int, degree: int) -> np.ndarray:
    """Knots u_0..u_{N+p+1} with unit interior spacing and (p+1)-fold ends."""
    n_spans = n_control - degree
    return np.concatenate(
        [np.zeros(degree), np.arange(n_spans + 1, dtype=float), np.full(degree, float(n_spans))]
    )


@dataclass
class UniformBSpline:
    control_points: np.ndarray
    degree: int = 3
    time_scale: float = 1.0  # seconds per unit knot interval
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.control_points = np.array(self.control_points, dtype=float)
        if self.control_points.ndim != 2:
            raise ValueError("control points must be an (N+1, dim) array")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if len(self.control_points) < self.degree + 1:
            raise ValueError(f"need at least {self.degree + 1} control points")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.knots = clamped_uniform_knots(len(self.control_points), self.degree)

    @property
    def n(self) -> int:
        """Index of the last control point (N)."""
        return len(self.control_points) - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n + 1])

    @property
    def duration(self) -> float:
        lo, hi = self.domain
        return (hi - lo) * self.time_scale

    def with_control_points(self, control_points) -> "UniformBSpline":
        return UniformBSpline(control_points, self.degree, self.time_scale)

    def span(self, u: float) -> int:
        """Knot span index k with u_k <= u < u_{k+1} (last span for u at the end)."""
        lo, hi = self.domain
        if not lo <= u <= hi:
            raise DomainError(f"u={u} outside [{lo}, {hi}]")
        if u >= hi:
            return self.n
        return int(np.searchsorted(self.knots, u, side="right") - 1)

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "control_points": self.control_points.tolist(),
            "time_scale": self.time_scale,
        }

    @classmethod
    def from_json(cls, data: dict) -> "UniformBSpline":
        return cls(np.asarray(data["control_points"], float), int(data["degree"]), float(data["time_scale"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "UniformBSpline":
        return cls.from_json(json.loads(Path(path).read_text()))


def evaluate(spline: UniformBSpline, u: float) -> np.ndarray:
    """De Boor's algorithm."""
    p = spline.degree
    t = spline.knots
    k = spline.span(u)
    d = spline.control_points[k - p : k + 1].copy()
    for r in range(1, p + 1):
        for j in range(p, r - 1, -1):
            i = j + k - p
            denom = t[i + p - r + 1] - t[i]
            alpha = 0.0 if denom == 0 else (u - t[i]) / denom
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[p]


def basis_functions(spline: UniformBSpline, u: float) -> tuple[int, np.ndarray]:
    """Nonzero basis values N_{k-p..k}^p(u) via the Cox-de Boor triangle."""
    p = spline.degree
    t = spline.knots
    k = spline.span(u)
    vals = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    vals[0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - t[k + 1 - j]
        right[j] = t[k + j] - u
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return k, vals


def basis_matrix(spline: UniformBSpline, params) -> np.ndarray:
    """Rows of N_i^p(u) for each parameter, shape (len(params), N+1)."""
    params = np.asarray(params, float)
    out = np.zeros((len(params), spline.n + 1))
    p = spline.degree
    for row, u in enumerate(params):
        k, vals = basis_functions(spline, float(u))
        out[row, k - p : k + 1] = vals
    return out


def evaluate_many(spline: UniformBSpline, params) -> np.ndarray:
    return basis_matrix(spline, params) @ spline.control_points


def dedupe(points, tol: float = 1e-9) -> np.ndarray:
    """Drop points that coincide (within ``tol``) with their predecessor."""
    pts = np.atleast_2d(np.asarray(points, float))
    if len(pts) < 2:
        return pts.copy()
    keep = np.ones(len(pts), dtype=bool)
    last = pts[0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - last) <= tol:
            keep[i] = False
        else:
            last = pts[i]
    return pts[keep]


def polyline_length(points) -> float:
    pts = np.asarray(points, float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def resample_polyline(points, count: int) -> np.ndarray:
    """``count`` points equally spaced in arc length along a polyline."""
    pts = np.asarray(points, float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], count)
    return np.stack([np.interp(targets, s, pts[:, a]) for a in range(pts.shape[1])], axis=1)


def fit_through(
    waypoints,
    degree: int = 3,
    n_control: int = 8,
    params=None,
    time_scale: float = 1.0,
) -> UniformBSpline:
    """Spline whose ends are pinned to the first and last waypoint and whose
    interior control points least-squares fit the remaining waypoints.

    Waypoints are assigned chord-length-proportional parameters unless
    ``params`` is given. When the fit is underdetermined the control polygon
    is the waypoint polyline resampled evenly in arc length.
    """
    if n_control < degree + 1:
        raise ValueError(f"need at least {degree + 1} control points")
    pts = np.asarray(waypoints, float)
    if params is None:
        pts = dedupe(pts)
    if len(pts) < 2:
        raise ValueError("need at least two distinct waypoints")

    template = UniformBSpline(np.zeros((n_control, pts.shape[1])), degree, time_scale)
    lo, hi = template.domain
    if params is None:
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        params = np.clip(lo + (hi - lo) * (chord / chord[-1]), lo, hi)
        params[-1] = hi
    else:
        params = np.asarray(params, float)
        if len(params) != len(pts):
            raise ValueError("params and waypoints differ in length")

    def polygon_fallback():
        return template.with_control_points(resample_polyline(pts, n_control))

    if n_control > len(pts) + 2:
        return polygon_fallback()

    B = basis_matrix(template, params)
    first, last = pts[0], pts[-1]
    rhs = pts - np.outer(B[:, 0], first) - np.outer(B[:, -1], last)
    A = B[:, 1:-1]
    if A.shape[1] == 0:
        return template.with_control_points(np.stack([first, last]))
    if np.linalg.matrix_rank(A) < A.shape[1]:
        return polygon_fallback()
    interior, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return template.with_control_points(np.vstack([first, interior, last]))


@dataclass
class PathPoints:
    points: np.ndarray
    dt: float
    params: np.ndarray | None = None  # spline parameter of each point, when sampled from one

    def __len__(self) -> int:
        return len(self.points)


def sample_uniform(spline: UniformBSpline, dt: float) -> PathPoints:
    """Points at times 0, dt, 2dt, ... plus the curve end (u affine in t)."""
    duration = spline.duration
    if dt <= 0 or dt > duration * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, {duration}]")
    n_full = int(np.floor(duration / dt + 1e-9))
    times = np.arange(n_full + 1) * dt
    if duration - times[-1] > 1e-9 * max(1.0, duration):
        times = np.append(times, duration)
    else:
        times[-1] = duration
    lo, _ = spline.domain
    params = lo + times / spline.time_scale
    params[-1] = spline.domain[1]
    points = evaluate_many(spline, params)
    points[0] = spline.control_points[0]
    points[-1] = spline.control_points[-1]
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-12
    return PathPoints(points[keep], dt, params[keep])
