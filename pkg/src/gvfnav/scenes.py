"""Seeded obstacle-field generation at a requested occupied-volume fraction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Box, Scene, VoxelGrid, rasterize_obstacles, rasterize_scene

STYLES = ("pillars-2d", "irregular-3d")
DENSITY_TOL = 0.03
MAX_ROUNDS = 1000
PITCHES = (4.5, 5.0, 4.0, 6.0)  # lattice spacings tried in turn
GAP_SCALES = (1.0, 0.75, 0.5)


class SceneGenerationError(RuntimeError):
    pass


@dataclass
class SceneSpec:
    extent: tuple[float, float, float] = (30.0, 10.0, 3.0)
    style: str = "pillars-2d"
    target_density: float = 0.3
    seed: int = 0
    resolution: float = 0.1
    min_gap: float = 1.8  # pillars only: free clearance between neighbors, narrowed only when the target needs it
    corridor_radius: float = 1.0
    forced: list = field(default_factory=list)  # obstacles added verbatim

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}")
        if not 0.0 <= self.target_density <= 0.6:
            raise ValueError("target_density must lie in [0, 0.6]")
        self.extent = tuple(float(e) for e in self.extent)

    @property
    def start(self) -> np.ndarray:
        ex, ey, ez = self.extent
        return np.array([1.0, ey / 2, ez / 2])

    @property
    def goal(self) -> np.ndarray:
        ex, ey, ez = self.extent
        return np.array([ex - 1.0, ey / 2, ez / 2])


def density(scene: Scene) -> float:
    """Occupied fraction of the scene's voxel grid."""
    return float(rasterize_scene(scene).occupancy.mean())


def band_density(scene: Scene) -> float:
    """Occupied fraction restricted to the height band spanned by obstacles."""
    if not scene.obstacles:
        return 0.0
    occ = rasterize_scene(scene).occupancy
    layers = np.flatnonzero(occ.any(axis=(0, 1)))
    return float(occ[:, :, layers[0] : layers[-1] + 1].mean())


def _box_point_distance(lo, hi, p) -> float:
    gap = np.maximum(np.maximum(np.asarray(lo) - p, p - np.asarray(hi)), 0.0)
    return float(np.linalg.norm(gap))


def _clear_of(lo, hi, points, radius, planar=False) -> bool:
    for p in points:
        lo_, hi_, p_ = (np.asarray(lo), np.asarray(hi), np.asarray(p))
        if planar:
            lo_, hi_, p_ = lo_[:2], hi_[:2], p_[:2]
        if _box_point_distance(lo_, hi_, p_) <= radius:
            return False
    return True


def _pillars(spec: SceneSpec, rng: np.random.Generator, pitch: float, gap: float) -> list:
    """One pillar per cell of a column-staggered lattice with a seeded offset.
    Each pillar stays ``gap / 2`` inside its cell, so neighbors are always
    separated by at least ``gap``."""
    ex, ey, ez = spec.extent
    nx, ny = max(int(ex // pitch), 1), max(int(ey // pitch), 1)
    wx, wy = ex / nx, ey / ny
    ends = (spec.start, spec.goal)
    base = rng.uniform(0, wy)
    usable = []
    for i in range(nx):
        shift = (base + 0.5 * wy * (i % 2)) % wy
        edges = np.concatenate([[0.0], np.arange(shift, ey, wy), [ey]])
        for y0, y1 in zip(edges[:-1], edges[1:]):
            lo = np.array([i * wx, y0]) + gap / 2
            hi = np.array([(i + 1) * wx, y1]) - gap / 2
            # keep pillars out of the x-bands holding the end corridors
            lo[0] = max(lo[0], spec.start[0] + spec.corridor_radius + 1e-6)
            hi[0] = min(hi[0], spec.goal[0] - spec.corridor_radius - 1e-6)
            room = hi - lo
            if np.any(room < 0.5) or not _clear_of(lo, hi, ends, spec.corridor_radius, planar=True):
                continue
            usable.append((lo, room))
    if not usable:
        return []
    rooms = np.array([r for _, r in usable])
    jitter = rng.uniform(0.85, 1.15, rooms.shape)
    # nominal side whose jittered, room-clipped rectangles cover the target area
    target = spec.target_density * ex * ey
    a, b = 0.0, float((rooms / jitter).max())
    for _ in range(60):
        mid = 0.5 * (a + b)
        if np.prod(np.minimum(mid * jitter, rooms), axis=1).sum() < target:
            a = mid
        else:
            b = mid
    out = []
    for (lo, room), jit in zip(usable, jitter):
        s = np.minimum(b * jit, room)
        blo = lo + rng.uniform(0, 1, 2) * (room - s)
        bhi = blo + s
        out.append(Box((float(blo[0]), float(blo[1]), 0.0), (float(bhi[0]), float(bhi[1]), ez)))
    return out


def _irregular(spec: SceneSpec, rng: np.random.Generator, grid: VoxelGrid) -> list | None:
    ex, ey, ez = spec.extent
    ends = (spec.start, spec.goal)
    target = spec.target_density
    out = []
    occ_frac = grid.occupancy.mean()
    for _ in range(MAX_ROUNDS):
        if occ_frac >= target - DENSITY_TOL / 3:
            return out
        size = rng.uniform([0.4, 0.4, 0.4], [2.0, 2.0, ez])
        lo = rng.uniform(0, 1, 3) * (np.array([ex, ey, ez]) - size)
        hi = lo + size
        if not _clear_of(lo, hi, ends, spec.corridor_radius):
            continue
        box = Box(tuple(map(float, lo)), tuple(map(float, hi)))
        before = grid.occupancy.copy()
        rasterize_obstacles(grid, [box])
        frac = grid.occupancy.mean()
        if frac > target + DENSITY_TOL:
            grid.occupancy[:] = before
            continue
        out.append(box)
        occ_frac = frac
    return None


def generate_scene(spec: SceneSpec) -> Scene:
    """Seeded obstacle field whose voxelized density is within 3 percentage
    points of the target; the 1 m spheres around start and goal stay free."""
    ex, ey, ez = spec.extent
    bounds = (np.zeros(3), np.array([ex, ey, ez]))
    forced = list(spec.forced)
    if spec.target_density == 0:
        return Scene(*bounds, spec.resolution, forced)
    rng = np.random.default_rng(spec.seed)
    # the full gap first; narrower gaps only when no spacing reaches the target
    layouts = [(p, spec.min_gap * g) for g in GAP_SCALES for p in PITCHES]
    for attempt in range(MAX_ROUNDS):
        if spec.style == "pillars-2d":
            obstacles = forced + _pillars(spec, rng, *layouts[attempt % len(layouts)])
        else:
            grid = rasterize_scene(Scene(*bounds, spec.resolution, forced))
            found = _irregular(spec, rng, grid)
            if found is None:
                continue
            obstacles = forced + found
        scene = Scene(*bounds, spec.resolution, obstacles)
        if abs(density(scene) - spec.target_density) <= DENSITY_TOL:
            return scene
    raise SceneGenerationError(f"density {spec.target_density} unreachable for {spec.style} in {MAX_ROUNDS} rounds")


def spec_to_json(spec: SceneSpec) -> dict:
    return {
        "extent": list(spec.extent),
        "style": spec.style,
        "target_density": spec.target_density,
        "seed": spec.seed,
        "resolution": spec.resolution,
    }


def save_scene(scene: Scene, path: str | Path, spec: SceneSpec | None = None) -> None:
    data = scene.to_json()
    if spec is not None:
        data["start"] = spec.start.tolist()
        data["goal"] = spec.goal.tolist()
        data["density"] = density(scene)
        data["band_density"] = band_density(scene)
    Path(path).write_text(json.dumps(data, indent=1))

