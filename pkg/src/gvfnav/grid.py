"""Voxel occupancy grids, exact Euclidean distance transforms and local
quadratic gradient fits.

Cell ``i`` along an axis covers ``[origin + i*res, origin + (i+1)*res)`` and its
center sits at ``origin + (i + 0.5)*res``. All distances are measured between
cell centers.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

DEFAULT_RESOLUTION = 0.1
_INF = 1e20


class OutOfBoundsError(ValueError):
    """Query point or path point outside the usable part of a grid."""


class AllFreeError(ValueError):
    """Distance transform requested on a grid with no occupied cell."""


class DegenerateFitError(ArithmeticError):
    """Least-squares quadratic fit with rank-deficient design."""


# --------------------------------------------------------------------------- #
# scenes
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Box:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def to_json(self) -> dict:
        return {"type": "box", "min": list(self.min), "max": list(self.max)}


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder with axis through ``center`` (x, y)."""

    center: tuple[float, float]
    radius: float
    z_min: float
    z_max: float

    def to_json(self) -> dict:
        return {
            "type": "cylinder",
            "center": list(self.center),
            "radius": self.radius,
            "z_min": self.z_min,
            "z_max": self.z_max,
        }


Obstacle = Box | Cylinder


@dataclass
class Scene:
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float)

    def to_json(self) -> dict:
        return {
            "bounds": {"min": self.bounds_min.tolist(), "max": self.bounds_max.tolist()},
            "resolution": self.resolution,
            "obstacles": [o.to_json() for o in self.obstacles],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        obstacles = []
        for o in data.get("obstacles", []):
            kind = o["type"]
            if kind == "box":
                obstacles.append(Box(tuple(o["min"]), tuple(o["max"])))
            elif kind == "cylinder":
                obstacles.append(
                    Cylinder(tuple(o["center"]), float(o["radius"]), float(o["z_min"]), float(o["z_max"]))
                )
            else:
                raise ValueError(f"unknown obstacle type {kind!r}")
        return cls(
            np.asarray(data["bounds"]["min"], dtype=float),
            np.asarray(data["bounds"]["max"], dtype=float),
            float(data.get("resolution", DEFAULT_RESOLUTION)),
            obstacles,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Scene":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- #
# grids
# --------------------------------------------------------------------------- #


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray  # bool, shape == dims

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 3:
            raise ValueError(f"grid dims must be 3 axes of at least 3 cells, got {self.occupancy.shape}")

    @classmethod
    def empty(cls, origin, resolution: float, dims: Sequence[int]) -> "VoxelGrid":
        return cls(np.asarray(origin, float), resolution, np.zeros(tuple(int(d) for d in dims), dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.resolution

    def index_of(self, point) -> np.ndarray:
        return np.floor((np.asarray(point, float) - self.origin) / self.resolution).astype(np.int64)

    def center_of(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, float) + 0.5) * self.resolution

    def contains_index(self, index) -> bool:
        index = np.asarray(index)
        return bool(np.all(index >= 0) and np.all(index < np.asarray(self.dims)))

    def contains(self, point) -> bool:
        return self.contains_index(self.index_of(point))

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.resolution

    def same_geometry(self, occupancy=None) -> "VoxelGrid":
        occ = np.zeros(self.dims, dtype=bool) if occupancy is None else occupancy
        return VoxelGrid(self.origin.copy(), self.resolution, occ)


@dataclass
class DistanceField:
    origin: np.ndarray
    resolution: float
    values: np.ndarray  # float64 meters, shape == dims

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.resolution

    def center_of(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, float) + 0.5) * self.resolution

    def index_of(self, point) -> np.ndarray:
        return np.floor((np.asarray(point, float) - self.origin) / self.resolution).astype(np.int64)

    @classmethod
    def constant(cls, origin, resolution: float, dims, value: float) -> "DistanceField":
        return cls(np.asarray(origin, float), resolution, np.full(tuple(dims), float(value)))


@dataclass
class GradientFit:
    """Quadratic model ``U(center + delta)`` with coefficients ordered
    (1, dx, dy, dz, dx^2/2, dx*dy, dx*dz, dy^2/2, dy*dz, dz^2/2)."""

    theta: np.ndarray
    center: np.ndarray
    window_radius: int

    @property
    def gradient(self) -> np.ndarray:
        return self.theta[1:4].copy()

    @property
    def hessian(self) -> np.ndarray:
        t = self.theta
        return np.array([[t[4], t[5], t[6]], [t[5], t[7], t[8]], [t[6], t[8], t[9]]])


# --------------------------------------------------------------------------- #
# rasterization
# --------------------------------------------------------------------------- #


def _grid_for_bounds(bounds_min, bounds_max, resolution: float) -> VoxelGrid:
    bounds_min = np.asarray(bounds_min, float)
    bounds_max = np.asarray(bounds_max, float)
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    extent = bounds_max - bounds_min
    if np.any(extent <= 0):
        raise ValueError(f"empty bounds {bounds_min} .. {bounds_max}")
    dims = np.maximum(np.round(extent / resolution).astype(int), 3)
    return VoxelGrid.empty(bounds_min, resolution, dims)


def obstacle_mask(obstacle: Obstacle, xs, ys, zs, inflate: float = 0.0) -> np.ndarray:
    """Boolean mask over the broadcast grid ``xs[:,None,None], ys[None,:,None], zs[None,None,:]``."""
    X, Y, Z = xs[:, None, None], ys[None, :, None], zs[None, None, :]
    if isinstance(obstacle, Box):
        lo = np.asarray(obstacle.min) - inflate
        hi = np.asarray(obstacle.max) + inflate
        return (X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1]) & (Z >= lo[2]) & (Z <= hi[2])
    r = obstacle.radius + inflate
    cx, cy = obstacle.center
    inside = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
    return inside & (Z >= obstacle.z_min - inflate) & (Z <= obstacle.z_max + inflate)


def rasterize_obstacles(grid: VoxelGrid, obstacles) -> VoxelGrid:
    """Mark every cell whose center lies inside any obstacle (in place)."""
    xs, ys, zs = (grid.cell_centers(a) for a in range(3))
    for obs in obstacles:
        if isinstance(obs, Box):
            lo, hi = np.asarray(obs.min), np.asarray(obs.max)
        else:
            cx, cy = obs.center
            lo = np.array([cx - obs.radius, cy - obs.radius, obs.z_min])
            hi = np.array([cx + obs.radius, cy + obs.radius, obs.z_max])
        # restrict to the obstacle's bounding index range
        sl = []
        for a, axis in enumerate((xs, ys, zs)):
            i0 = int(np.searchsorted(axis, lo[a], side="left"))
            i1 = int(np.searchsorted(axis, hi[a], side="right"))
            sl.append(slice(i0, i1))
        if any(s.start >= s.stop for s in sl):
            continue
        sub = obstacle_mask(obs, xs[sl[0]], ys[sl[1]], zs[sl[2]])
        grid.occupancy[sl[0], sl[1], sl[2]] |= sub
    return grid


def rasterize_scene(scene: Scene | Sequence, bounds=None, resolution: float | None = None) -> VoxelGrid:
    """Occupancy grid where a cell is occupied iff its center is inside an obstacle."""
    if isinstance(scene, Scene):
        obstacles = scene.obstacles
        bounds = (scene.bounds_min, scene.bounds_max) if bounds is None else bounds
        resolution = scene.resolution if resolution is None else resolution
    else:
        obstacles = scene
        if bounds is None or resolution is None:
            raise ValueError("bounds and resolution are required for a bare obstacle list")
    grid = _grid_for_bounds(bounds[0], bounds[1], resolution)
    return rasterize_obstacles(grid, obstacles)


def traverse_segment(p0, p1, origin, resolution: float) -> list[tuple[int, int, int]]:
    """Cells visited by the segment p0 -> p1 (3-D digital line traversal).

    Cells are stepped one axis at a time so consecutive cells share a face.
    """
    p0 = (np.asarray(p0, float) - origin) / resolution
    p1 = (np.asarray(p1, float) - origin) / resolution
    cell = np.floor(p0).astype(np.int64)
    end = np.floor(p1).astype(np.int64)
    d = p1 - p0
    step = np.sign(d).astype(np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        if d[a] != 0:
            nxt = cell[a] + (1 if d[a] > 0 else 0)
            t_max[a] = (nxt - p0[a]) / d[a]
            t_delta[a] = abs(1.0 / d[a])
    cells = [tuple(int(c) for c in cell)]
    n_steps = int(np.abs(end - cell).sum())
    for _ in range(n_steps):
        a = int(np.argmin(t_max))
        if t_max[a] > 1.0:
            break
        cell[a] += step[a]
        t_max[a] += t_delta[a]
        cells.append(tuple(int(c) for c in cell))
    return cells


def rasterize_path(points, geometry: VoxelGrid | DistanceField) -> VoxelGrid:
    """Occupancy grid marking the cells holding a path point or crossed by a
    segment between consecutive points."""
    pts = np.atleast_2d(np.asarray(points, float))
    if len(pts) == 0:
        raise ValueError("path is empty")
    dims = np.asarray(geometry.dims)
    out = VoxelGrid.empty(geometry.origin, geometry.resolution, dims)
    idx = np.floor((pts - out.origin) / out.resolution).astype(np.int64)
    bad = np.flatnonzero(np.any((idx < 0) | (idx >= dims), axis=1))
    if len(bad):
        raise OutOfBoundsError(f"path point {int(bad[0])} at {pts[bad[0]]} outside grid bounds")
    occ = out.occupancy
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    # only segments whose endpoints are not face-neighbors need traversal
    gap = np.abs(np.diff(idx, axis=0)).sum(axis=1) > 1
    for k in np.flatnonzero(gap):
        for c in traverse_segment(pts[k], pts[k + 1], out.origin, out.resolution):
            occ[c] = True
    return out


# --------------------------------------------------------------------------- #
# exact Euclidean distance transform
# --------------------------------------------------------------------------- #


@njit(cache=True)
def _lower_envelope_1d(f, out, v, z):
    """Squared distance transform of one line (lower envelope of parabolas)."""
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        if f[q] >= _INF:
            continue
        if f[v[0]] >= _INF:
            v[0] = q
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                if k == 0:
                    v[0] = q
                    z[0] = -np.inf
                    z[1] = np.inf
                    break
                k -= 1
            else:
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = np.inf
                break
    if f[v[0]] >= _INF:
        for q in range(n):
            out[q] = _INF
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        dq = q - v[k]
        out[q] = dq * dq + f[v[k]]


@njit(cache=True)
def _edt_squared(occ):
    nx, ny, nz = occ.shape
    g = np.empty((nx, ny, nz))
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                g[i, j, k] = 0.0 if occ[i, j, k] else _INF
    m = max(nx, max(ny, nz))
    f = np.empty(m)
    out = np.empty(m)
    v = np.empty(m, dtype=np.int64)
    z = np.empty(m + 1)
    # pass along z
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = g[i, j, k]
            _lower_envelope_1d(f[:nz], out[:nz], v, z)
            for k in range(nz):
                g[i, j, k] = out[k]
    # pass along y
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = g[i, j, k]
            _lower_envelope_1d(f[:ny], out[:ny], v, z)
            for j in range(ny):
                g[i, j, k] = out[j]
    # pass along x
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = g[i, j, k]
            _lower_envelope_1d(f[:nx], out[:nx], v, z)
            for i in range(nx):
                g[i, j, k] = out[i]
    return g


def squared_cell_distance(occupancy: np.ndarray) -> np.ndarray:
    """Exact squared distance (in cells^2) from every cell to the nearest occupied cell."""
    occ = np.ascontiguousarray(occupancy, dtype=np.bool_)
    if not occ.any():
        raise AllFreeError("grid has no occupied cell")
    return _edt_squared(occ)


def euclidean_distance_transform(grid: VoxelGrid) -> DistanceField:
    """Exact Euclidean distance (meters) from each cell center to the nearest
    occupied cell center, via three separable lower-envelope passes."""
    sq = squared_cell_distance(grid.occupancy)
    return DistanceField(grid.origin.copy(), grid.resolution, np.sqrt(sq) * grid.resolution)


# --------------------------------------------------------------------------- #
# continuous access
# --------------------------------------------------------------------------- #


def _continuous_index(field: DistanceField, xi) -> np.ndarray:
    return (np.asarray(xi, float) - field.origin) / field.resolution - 0.5


def sample_distance(field: DistanceField, xi) -> float:
    """Trilinear interpolation of the 8 cell centers surrounding ``xi``."""
    g = _continuous_index(field, xi)
    dims = np.asarray(field.dims)
    if np.any(g < 0) or np.any(g > dims - 1) or not np.all(np.isfinite(g)):
        raise OutOfBoundsError(f"point {xi} outside interpolation domain")
    i0 = np.minimum(np.floor(g).astype(np.int64), dims - 2)
    t = g - i0
    c = field.values[i0[0] : i0[0] + 2, i0[1] : i0[1] + 2, i0[2] : i0[2] + 2]
    c = c[0] * (1 - t[0]) + c[1] * t[0]
    c = c[0] * (1 - t[1]) + c[1] * t[1]
    return float(c[0] * (1 - t[2]) + c[1] * t[2])


def interpolation_bounds(field: DistanceField, margin_cells: float = 0.0):
    """Metric box where ``sample_distance`` is defined, shrunk by ``margin_cells``."""
    lo = field.origin + (0.5 + margin_cells) * field.resolution
    hi = field.origin + (np.asarray(field.dims) - 0.5 - margin_cells) * field.resolution
    return lo, hi


def _window_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)


def quadratic_design(delta: np.ndarray) -> np.ndarray:
    dx, dy, dz = delta[:, 0], delta[:, 1], delta[:, 2]
    return np.stack(
        [np.ones_like(dx), dx, dy, dz, 0.5 * dx * dx, dx * dy, dx * dz, 0.5 * dy * dy, dy * dz, 0.5 * dz * dz],
        axis=1,
    )


@lru_cache(maxsize=32)
def fit_operator(radius: int, resolution: float) -> np.ndarray:
    """Pseudo-inverse mapping window values (C order) to quadratic coefficients
    about the window's center cell."""
    design = quadratic_design(_window_offsets(radius) * resolution)
    if np.linalg.matrix_rank(design) < 10:
        raise DegenerateFitError(f"window radius {radius} cannot determine a quadratic")
    op = np.linalg.pinv(design)
    op.setflags(write=False)
    return op


def _shift_theta(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Re-express a quadratic about a point displaced by ``e`` from its anchor."""
    fit = GradientFit(theta, np.zeros(3), 0)
    H = fit.hessian
    g = theta[1:4] + H @ e
    out = theta.copy()
    out[0] = theta[0] + theta[1:4] @ e + 0.5 * e @ H @ e
    out[1:4] = g
    return out


def fit_quadratic(field: DistanceField, xi, window_radius: int = 2) -> GradientFit:
    """Least-squares quadratic over the cube of cells centered on ``xi``'s cell.

    Displacements are in meters measured from ``xi``. The window shrinks to
    radius 1 when clipped by the field bounds.
    """
    xi = np.asarray(xi, float)
    center = np.floor((xi - field.origin) / field.resolution).astype(np.int64)
    dims = np.asarray(field.dims)
    for radius in (window_radius, 1):
        if radius > window_radius:
            continue
        if np.all(center - radius >= 0) and np.all(center + radius <= dims - 1):
            break
    else:
        raise OutOfBoundsError(f"fit window around {xi} clipped by field bounds")
    lo = center - radius
    hi = center + radius + 1
    vals = field.values[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]].reshape(-1)
    theta_anchor = fit_operator(radius, float(field.resolution)) @ vals
    theta = _shift_theta(theta_anchor, xi - field.center_of(center))
    return GradientFit(theta, xi, radius)


def fit_gradient(field: DistanceField, xi, window_radius: int = 2) -> np.ndarray:
    """Gradient of the local quadratic fit at ``xi``."""
    return fit_quadratic(field, xi, window_radius).gradient


# --------------------------------------------------------------------------- #
# smoothed distance for optimization
# --------------------------------------------------------------------------- #


@njit(cache=True)
def _blended_fit(values, origin, res, xi, op2, op1, out_grad):
    """Trilinear blend of the quadratic fits anchored at the 8 cell centers
    around ``xi``. Returns the value (or -1 when not computable) and writes the
    exact gradient of the blend into ``out_grad``."""
    nx, ny, nz = values.shape
    g = np.empty(3)
    i0 = np.empty(3, dtype=np.int64)
    t = np.empty(3)
    dims = (nx, ny, nz)
    for a in range(3):
        g[a] = (xi[a] - origin[a]) / res - 0.5
        if not (g[a] >= 0.0 and g[a] <= dims[a] - 1):
            return -1.0
        i0[a] = min(int(np.floor(g[a])), dims[a] - 2)
        t[a] = g[a] - i0[a]
    value = 0.0
    out_grad[0] = 0.0
    out_grad[1] = 0.0
    out_grad[2] = 0.0
    theta = np.empty(10)
    e = np.empty(3)
    for ca in range(2):
        for cb in range(2):
            for cc in range(2):
                c0 = i0[0] + ca
                c1 = i0[1] + cb
                c2 = i0[2] + cc
                radius = 2
                if c0 - 2 < 0 or c1 - 2 < 0 or c2 - 2 < 0 or c0 + 2 >= nx or c1 + 2 >= ny or c2 + 2 >= nz:
                    radius = 1
                    if c0 - 1 < 0 or c1 - 1 < 0 or c2 - 1 < 0 or c0 + 1 >= nx or c1 + 1 >= ny or c2 + 1 >= nz:
                        return -1.0
                op = op2 if radius == 2 else op1
                for m in range(10):
                    theta[m] = 0.0
                col = 0
                for a in range(c0 - radius, c0 + radius + 1):
                    for b in range(c1 - radius, c1 + radius + 1):
                        for c in range(c2 - radius, c2 + radius + 1):
                            v = values[a, b, c]
                            for m in range(10):
                                theta[m] += op[m, col] * v
                            col += 1
                e[0] = xi[0] - (origin[0] + (c0 + 0.5) * res)
                e[1] = xi[1] - (origin[1] + (c1 + 0.5) * res)
                e[2] = xi[2] - (origin[2] + (c2 + 0.5) * res)
                gx = theta[1] + theta[4] * e[0] + theta[5] * e[1] + theta[6] * e[2]
                gy = theta[2] + theta[5] * e[0] + theta[7] * e[1] + theta[8] * e[2]
                gz = theta[3] + theta[6] * e[0] + theta[8] * e[1] + theta[9] * e[2]
                q = theta[0] + 0.5 * (
                    (theta[1] + gx) * e[0] + (theta[2] + gy) * e[1] + (theta[3] + gz) * e[2]
                )
                wx = t[0] if ca else 1.0 - t[0]
                wy = t[1] if cb else 1.0 - t[1]
                wz = t[2] if cc else 1.0 - t[2]
                dwx = (1.0 if ca else -1.0) / res
                dwy = (1.0 if cb else -1.0) / res
                dwz = (1.0 if cc else -1.0) / res
                w = wx * wy * wz
                value += w * q
                out_grad[0] += w * gx + dwx * wy * wz * q
                out_grad[1] += w * gy + wx * dwy * wz * q
                out_grad[2] += w * gz + wx * wy * dwz * q
    return value


@njit(cache=True)
def _trilinear(values, origin, res, xi):
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
def _smoothed_batch(values, origin, res, points, op2, op1, gate):
    n = points.shape[0]
    d = np.empty(n)
    grad = np.zeros((n, 3))
    status = np.zeros(n, dtype=np.int64)  # 0 ok, 1 gated (far), 2 out of bounds
    tmp = np.empty(3)
    for k in range(n):
        tri = _trilinear(values, origin, res, points[k])
        if tri < 0.0:
            status[k] = 2
            d[k] = 0.0
            continue
        if tri >= gate:
            status[k] = 1
            d[k] = tri
            continue
        val = _blended_fit(values, origin, res, points[k], op2, op1, tmp)
        if val == -1.0:
            status[k] = 2
            d[k] = 0.0
            continue
        d[k] = val
        grad[k, 0] = tmp[0]
        grad[k, 1] = tmp[1]
        grad[k, 2] = tmp[2]
    return d, grad, status


def smoothed_distance(field: DistanceField, points, gate: float = np.inf):
    """Distance and its exact gradient from blended local quadratic fits.

    Points whose trilinear distance is at least ``gate`` skip the fit and report
    the trilinear value with zero gradient (status 1); points outside the field
    report status 2.
    """
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    res = float(field.resolution)
    return _smoothed_batch(
        np.ascontiguousarray(field.values),
        np.ascontiguousarray(field.origin),
        res,
        pts,
        np.ascontiguousarray(fit_operator(2, res)),
        np.ascontiguousarray(fit_operator(1, res)),
        float(gate),
    )


# --------------------------------------------------------------------------- #
# file formats
# --------------------------------------------------------------------------- #

_DUMP_HEADER = struct.Struct("<3Id3d")


def write_field_dump(field: DistanceField, path: str | Path) -> None:
    """Little-endian header (3 x u32 dims, f64 resolution, 3 x f64 origin) then row-major f64 values."""
    header = _DUMP_HEADER.pack(*field.dims, float(field.resolution), *map(float, field.origin))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_field_dump(path: str | Path) -> DistanceField:
    raw = Path(path).read_bytes()
    nx, ny, nz, res, ox, oy, oz = _DUMP_HEADER.unpack_from(raw)
    values = np.frombuffer(raw, dtype="<f8", offset=_DUMP_HEADER.size)
    if values.size != nx * ny * nz:
        raise ValueError("field dump truncated")
    return DistanceField(np.array([ox, oy, oz]), res, values.reshape(nx, ny, nz).copy())


def write_field_slice_csv(field: DistanceField, z: float, path: str | Path) -> int:
    """Write (x, y, value) rows at the cell layer containing height ``z``."""
    k = int(np.floor((z - field.origin[2]) / field.resolution))
    if not 0 <= k < field.dims[2]:
        raise OutOfBoundsError(f"z={z} outside field")
    xs = field.origin[0] + (np.arange(field.dims[0]) + 0.5) * field.resolution
    ys = field.origin[1] + (np.arange(field.dims[1]) + 0.5) * field.resolution
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(field.values[i, j, k]))])
                rows += 1
    return rows
