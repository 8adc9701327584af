"""Guiding vector field built from a discretized reference path.

chi(xi) = K1 * tau(xi) + K2 * tanh(d / r) * n(xi), where tau averages the
chords around the nearest path point, d is the distance to the rasterized path
and n is the normalized negative gradient of that distance from a local
quadratic fit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .bspline import PathPoints, dedupe
from .grid import (
    DistanceField,
    OutOfBoundsError,
    VoxelGrid,
    euclidean_distance_transform,
    fit_operator,
    rasterize_path,
)

K1_DEFAULT = 1.5
K2_DEFAULT = 1.5
BANDWIDTH_DEFAULT = 1.0
GRAD_EPS = 1e-6


class DegenerateTangentError(ArithmeticError):
    pass


def shape(d, r: float = BANDWIDTH_DEFAULT):
    """Saturating distance weight tanh(d / r)."""
    if r <= 0:
        raise ValueError("r must be positive")
    return np.tanh(np.asarray(d, float) / r)


# --------------------------------------------------------------------------- #
# numba kernels
# --------------------------------------------------------------------------- #


@njit(cache=True)
def _nearest(points, xi):
    best = 0
    best_d2 = np.inf
    for i in range(points.shape[0]):
        d2 = 0.0
        for a in range(3):
            t = xi[a] - points[i, a]
            d2 += t * t
        if d2 <= best_d2:  # ties go to the later index
            best_d2 = d2
            best = i
    return best


@njit(cache=True)
def _tangent(points, i, out):
    """Sum of the two chords around ``i`` (boundary triples at the ends), normalized.
    Returns False when the sum is degenerate."""
    n = points.shape[0] - 1
    c = i
    if c < 1:
        c = 1
    if c > n - 1:
        c = n - 1
    norm2 = 0.0
    for a in range(3):
        out[a] = points[c + 1, a] - points[c - 1, a]
        norm2 += out[a] * out[a]
    norm = np.sqrt(norm2)
    if norm < 1e-9:
        return False
    for a in range(3):
        out[a] /= norm
    return True


@njit(cache=True)
def _trilinear_at(values, origin, res, xi):
    nx, ny, nz = values.shape
    dims = (nx, ny, nz)
    i0 = np.empty(3, dtype=np.int64)
    t = np.empty(3)
    for a in range(3):
        g = (xi[a] - origin[a]) / res - 0.5
        if not (g >= 0.0 and g <= dims[a] - 1):
            return -1.0
        i0[a] = min(int(np.floor(g)), dims[a] - 2)
        t[a] = g - i0[a]
    acc = 0.0
    for ca in range(2):
        for cb in range(2):
            for cc in range(2):
                w = (t[0] if ca else 1 - t[0]) * (t[1] if cb else 1 - t[1]) * (t[2] if cc else 1 - t[2])
                acc += w * values[i0[0] + ca, i0[1] + cb, i0[2] + cc]
    return acc


@njit(cache=True)
def _fit_grad(values, origin, res, xi, op2, op1, out):
    """Gradient at ``xi`` of the quadratic fitted over the cube around its cell.
    Returns False when no window fits inside the field."""
    nx, ny, nz = values.shape
    dims = (nx, ny, nz)
    c = np.empty(3, dtype=np.int64)
    for a in range(3):
        c[a] = int(np.floor((xi[a] - origin[a]) / res))
    radius = 0
    for rad in (2, 1):
        ok = True
        for a in range(3):
            if c[a] - rad < 0 or c[a] + rad > dims[a] - 1:
                ok = False
        if ok:
            radius = rad
            break
    if radius == 0:
        return False
    op = op2 if radius == 2 else op1
    theta = np.zeros(10)
    m = 0
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            for k in range(-radius, radius + 1):
                v = values[c[0] + i, c[1] + j, c[2] + k]
                for q in range(10):
                    theta[q] += op[q, m] * v
                m += 1
    e0 = xi[0] - (origin[0] + (c[0] + 0.5) * res)
    e1 = xi[1] - (origin[1] + (c[1] + 0.5) * res)
    e2 = xi[2] - (origin[2] + (c[2] + 0.5) * res)
    out[0] = theta[1] + theta[4] * e0 + theta[5] * e1 + theta[6] * e2
    out[1] = theta[2] + theta[5] * e0 + theta[7] * e1 + theta[8] * e2
    out[2] = theta[3] + theta[6] * e0 + theta[8] * e1 + theta[9] * e2
    return True


@njit(cache=True)
def _guide_batch(xis, points, values, origin, res, op2, op1, k1, k2, r, eps_g):
    """Returns chi (n x 3), d (n), status (0 ok, 1 normal dropped, 2 out of bounds,
    3 degenerate tangent)."""
    n = xis.shape[0]
    chi = np.zeros((n, 3))
    dist = np.zeros(n)
    status = np.zeros(n, dtype=np.int64)
    tau = np.empty(3)
    g = np.empty(3)
    for q in range(n):
        xi = xis[q]
        d = _trilinear_at(values, origin, res, xi)
        if d < 0.0:
            status[q] = 2
            dist[q] = np.nan
            continue
        dist[q] = d
        if not _fit_grad(values, origin, res, xi, op2, op1, g):
            status[q] = 2
            continue
        i = _nearest(points, xi)
        if not _tangent(points, i, tau):
            status[q] = 3
            continue
        for a in range(3):
            chi[q, a] = k1 * tau[a]
        gn = np.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
        if gn < eps_g:
            status[q] = 1
            continue
        s = np.tanh(d / r)
        for a in range(3):
            chi[q, a] -= k2 * s * g[a] / gn
    return chi, dist, status


# --------------------------------------------------------------------------- #
# field object
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class GuidingField:
    path: PathPoints
    u_field: DistanceField
    K1: float = K1_DEFAULT
    K2: float = K2_DEFAULT
    r: float = BANDWIDTH_DEFAULT
    eps_g: float = GRAD_EPS

    def __post_init__(self):
        if self.K1 <= 0 or self.K2 <= 0 or self.r <= 0:
            raise ValueError("K1, K2 and r must be positive")
        pts = dedupe(self.path.points)
        if len(pts) < 3:
            raise ValueError("path needs at least 3 distinct points")
        object.__setattr__(self, "_points", np.ascontiguousarray(pts))
        res = float(self.u_field.resolution)
        object.__setattr__(self, "_ops", (np.ascontiguousarray(fit_operator(2, res)), np.ascontiguousarray(fit_operator(1, res))))
        object.__setattr__(self, "_values", np.ascontiguousarray(self.u_field.values, dtype=float))

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest_index(self, xi) -> int:
        return int(_nearest(self._points, np.asarray(xi, float)))

    def tangent(self, xi) -> np.ndarray:
        out = np.empty(3)
        if not _tangent(self._points, self.nearest_index(xi), out):
            raise DegenerateTangentError(f"chord sum vanishes near {xi}")
        return out

    def normal(self, xi) -> np.ndarray | None:
        g = np.empty(3)
        xi = np.asarray(xi, float)
        if not _fit_grad(self._values, self.u_field.origin, float(self.u_field.resolution), xi, *self._ops, g):
            raise OutOfBoundsError(f"fit window around {xi} clipped by field bounds")
        norm = np.linalg.norm(g)
        if norm < self.eps_g:
            return None
        return -g / norm

    def distance(self, xi) -> float:
        d = _trilinear_at(self._values, self.u_field.origin, float(self.u_field.resolution), np.asarray(xi, float))
        if d < 0:
            raise OutOfBoundsError(f"point {xi} outside field")
        return float(d)

    def guide_many(self, xis):
        """Vectorized field: (chi, d, status) with status 0 ok, 1 normal dropped,
        2 out of bounds, 3 degenerate tangent."""
        xis = np.ascontiguousarray(np.atleast_2d(xis), dtype=float)
        return _guide_batch(
            xis,
            self._points,
            self._values,
            np.ascontiguousarray(self.u_field.origin, dtype=float),
            float(self.u_field.resolution),
            *self._ops,
            float(self.K1),
            float(self.K2),
            float(self.r),
            float(self.eps_g),
        )

    def guide(self, xi) -> np.ndarray:
        chi, _, status = self.guide_many(xi)
        if status[0] == 2:
            raise OutOfBoundsError(f"point {xi} outside field")
        if status[0] == 3:
            raise DegenerateTangentError(f"chord sum vanishes near {xi}")
        return chi[0]

    def interior_bounds(self):
        """Box where every query is answerable (fit window of radius 2)."""
        res = self.u_field.resolution
        lo = self.u_field.origin + 2 * res
        hi = self.u_field.origin + (np.asarray(self.u_field.dims) - 2) * res - 1e-9 * res
        return lo, hi

    def clamp(self, xi) -> np.ndarray:
        lo, hi = self.interior_bounds()
        return np.clip(np.asarray(xi, float), lo, hi)


def path_distance_field(points, resolution: float, margin=2.0, r: float = BANDWIDTH_DEFAULT) -> DistanceField:
    """Distance to the rasterized path on a lattice aligned to multiples of
    ``resolution``, spanning the path's bounding box plus ``margin`` (scalar or
    per-axis)."""
    pts = np.atleast_2d(np.asarray(points, float))
    margin = np.broadcast_to(np.asarray(margin, float), (3,))
    if np.any(margin < r) or np.any(margin < 3 * resolution):
        raise ValueError(f"margin {margin} must be at least r={r} and three cells")
    lo = np.floor((pts.min(axis=0) - margin) / resolution) * resolution
    hi = np.ceil((pts.max(axis=0) + margin) / resolution) * resolution
    dims = np.maximum(np.round((hi - lo) / resolution).astype(int), 5)
    geom = VoxelGrid.empty(lo, resolution, dims)
    return euclidean_distance_transform(rasterize_path(pts, geom))


def build_guiding_field(
    path: PathPoints | np.ndarray,
    resolution: float,
    margin=2.0,
    K1: float = K1_DEFAULT,
    K2: float = K2_DEFAULT,
    r: float = BANDWIDTH_DEFAULT,
    eps_g: float = GRAD_EPS,
) -> GuidingField:
    if not isinstance(path, PathPoints):
        path = PathPoints(np.atleast_2d(np.asarray(path, float)), 0.0)
    return GuidingField(path, path_distance_field(path.points, resolution, margin, r), K1, K2, r, eps_g)


def slice_rows(field: GuidingField, z: float, spacing: float, lo=None, hi=None):
    """Uniform (x, y) lattice at height ``z`` with (x, y, chi_x, chi_y, d);
    points the field cannot answer carry NaN."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if lo is None or hi is None:
        blo, bhi = field.interior_bounds()
        lo = blo[:2] if lo is None else lo
        hi = bhi[:2] if hi is None else hi
    nx = int(np.floor((hi[0] - lo[0]) / spacing + 1e-9)) + 1
    ny = int(np.floor((hi[1] - lo[1]) / spacing + 1e-9)) + 1
    xs = lo[0] + np.arange(nx) * spacing
    ys = lo[1] + np.arange(ny) * spacing
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    q = np.stack([X.ravel(), Y.ravel(), np.full(X.size, float(z))], axis=1)
    chi, d, status = field.guide_many(q)
    bad = status >= 2
    chi[bad] = np.nan
    d[bad] = np.nan
    return np.column_stack([q[:, 0], q[:, 1], chi[:, 0], chi[:, 1], d])


def write_field_slice(field: GuidingField, z: float, spacing: float, path: str | Path, lo=None, hi=None) -> int:
    rows = slice_rows(field, z, spacing, lo, hi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "chi_x", "chi_y", "d"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return len(rows)


def follow(field: GuidingField, xi0, dt: float = 0.01, horizon: float = 10.0, stop_at_end: bool = True):
    """RK4 integral curve of xi' = chi(xi), clamped to the answerable box.

    Stops early once the nearest path point is the last one when
    ``stop_at_end`` is set. Returns (times, states).
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    n = int(round(horizon / dt))
    x = field.clamp(xi0)
    states = [x]
    last = len(field.points) - 1

    def rhs(p):
        return field.guide(field.clamp(p))

    for _ in range(n):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = field.clamp(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        states.append(x)
        if stop_at_end and field.nearest_index(x) == last:
            break
    states = np.array(states)
    return np.arange(len(states)) * dt, states
