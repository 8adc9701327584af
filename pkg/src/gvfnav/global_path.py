"""Collision-free waypoints over an occupancy grid: 26-connected A* plus
line-of-sight shortcutting, and receding-horizon goal selection."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import VoxelGrid, squared_cell_distance, AllFreeError


class NoPathError(RuntimeError):
    pass


@dataclass
class PathQuery:
    start: np.ndarray
    goal: np.ndarray
    inflation: float = 0.2
    allow_unknown: bool = True

    def __post_init__(self):
        self.start = np.asarray(self.start, float)
        self.goal = np.asarray(self.goal, float)


def inflate(grid: VoxelGrid, radius: float) -> np.ndarray:
    """Cells whose center lies within ``radius`` of an occupied cell center."""
    if radius <= 0:
        return grid.occupancy.copy()
    try:
        sq = squared_cell_distance(grid.occupancy)
    except AllFreeError:
        return np.zeros(grid.dims, dtype=bool)
    return sq <= (radius / grid.resolution) ** 2 + 1e-9


def _neighbor_table():
    offs = []
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            for c in (-1, 0, 1):
                if a or b or c:
                    offs.append((a, b, c))
    offs = np.array(offs, dtype=np.int64)
    return offs, np.sqrt((offs**2).sum(axis=1)).astype(np.float64)


_OFFSETS, _COSTS = _neighbor_table()


@njit(cache=True)
def _move_clear(blocked, i, j, k, a, b, c):
    """All cells of the move's bounding cube are free (no corner cutting)."""
    for da in range(min(0, a), max(0, a) + 1):
        for db in range(min(0, b), max(0, b) + 1):
            for dc in range(min(0, c), max(0, c) + 1):
                if blocked[i + da, j + db, k + dc]:
                    return False
    return True


@njit(cache=True)
def _octile(a, b, c):
    """Exact 26-connected move distance between cells offset by (a, b, c)."""
    a, b, c = abs(a), abs(b), abs(c)
    hi = max(a, b, c)
    lo = min(a, b, c)
    mid = a + b + c - hi - lo
    return (np.sqrt(3.0) - np.sqrt(2.0)) * lo + (np.sqrt(2.0) - 1.0) * mid + hi


@njit(cache=True)
def _astar(blocked, start, goal, offsets, costs, penalty, weight):
    nx, ny, nz = blocked.shape
    n = nx * ny * nz
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    s = (start[0] * ny + start[1]) * nz + start[2]
    t = (goal[0] * ny + goal[1]) * nz + goal[2]
    g[s] = 0.0
    h0 = weight * _octile(start[0] - goal[0], start[1] - goal[1], start[2] - goal[2])
    heap = [(h0, h0, s)]
    found = False
    while len(heap) > 0:
        f, h, u = heapq.heappop(heap)
        if closed[u]:
            continue
        if u == t:
            found = True
            break
        closed[u] = True
        i = u // (ny * nz)
        j = (u // nz) % ny
        k = u % nz
        for m in range(offsets.shape[0]):
            a = offsets[m, 0]
            b = offsets[m, 1]
            c = offsets[m, 2]
            ii = i + a
            jj = j + b
            kk = k + c
            if ii < 0 or jj < 0 or kk < 0 or ii >= nx or jj >= ny or kk >= nz:
                continue
            v = (ii * ny + jj) * nz + kk
            if closed[v] or blocked[ii, jj, kk]:
                continue
            if not _move_clear(blocked, i, j, k, a, b, c):
                continue
            cand = g[u] + costs[m] * (1.0 + penalty[ii, jj, kk])
            if cand < g[v]:
                g[v] = cand
                parent[v] = u
                hv = weight * _octile(ii - goal[0], jj - goal[1], kk - goal[2])
                heapq.heappush(heap, (cand + hv, hv, v))
    if not found:
        return np.empty((0, 3), dtype=np.int64), np.inf
    count = 1
    v = t
    while v != s:
        v = parent[v]
        count += 1
    out = np.empty((count, 3), dtype=np.int64)
    v = t
    for q in range(count - 1, -1, -1):
        out[q, 0] = v // (ny * nz)
        out[q, 1] = (v // nz) % ny
        out[q, 2] = v % nz
        if q > 0:
            v = parent[v]
    return out, g[t]


@njit(cache=True)
def _segment_clear(blocked, p0, p1):
    """Face-connected digital line traversal in cell coordinates; at exact
    ties both side cells are checked."""
    nx, ny, nz = blocked.shape
    cell = np.empty(3, dtype=np.int64)
    end = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        cell[a] = int(np.floor(p0[a]))
        end[a] = int(np.floor(p1[a]))
        d = p1[a] - p0[a]
        if d > 0:
            step[a] = 1
            t_max[a] = (cell[a] + 1 - p0[a]) / d
            t_delta[a] = 1.0 / d
        elif d < 0:
            step[a] = -1
            t_max[a] = (cell[a] - p0[a]) / d
            t_delta[a] = -1.0 / d
    dims = (nx, ny, nz)
    for a in range(3):
        if cell[a] < 0 or cell[a] >= dims[a]:
            return False
    if blocked[cell[0], cell[1], cell[2]]:
        return False
    n_steps = abs(end[0] - cell[0]) + abs(end[1] - cell[1]) + abs(end[2] - cell[2])
    for _ in range(n_steps + 3):
        a = 0
        if t_max[1] < t_max[a]:
            a = 1
        if t_max[2] < t_max[a]:
            a = 2
        if t_max[a] > 1.0:
            break
        # side cells at ties
        for b in range(3):
            if b != a and abs(t_max[b] - t_max[a]) < 1e-12:
                side0 = cell[0] + (step[0] if b == 0 else 0)
                side1 = cell[1] + (step[1] if b == 1 else 0)
                side2 = cell[2] + (step[2] if b == 2 else 0)
                if side0 < 0 or side1 < 0 or side2 < 0 or side0 >= nx or side1 >= ny or side2 >= nz:
                    return False
                if blocked[side0, side1, side2]:
                    return False
        cell[a] += step[a]
        t_max[a] += t_delta[a]
        if cell[a] < 0 or cell[a] >= dims[a]:
            return False
        if blocked[cell[0], cell[1], cell[2]]:
            return False
    return True


def segment_clear(blocked: np.ndarray, grid: VoxelGrid, p0, p1) -> bool:
    a = (np.asarray(p0, float) - grid.origin) / grid.resolution
    b = (np.asarray(p1, float) - grid.origin) / grid.resolution
    return bool(_segment_clear(blocked, a, b))


def nearest_free(blocked: np.ndarray, index, max_cells: float) -> np.ndarray | None:
    """Closest free cell (Euclidean, in cells) within ``max_cells``; ties by lexicographic index."""
    index = np.asarray(index, dtype=np.int64)
    r = int(np.ceil(max_cells))
    lo = np.maximum(index - r, 0)
    hi = np.minimum(index + r + 1, blocked.shape)
    sub = blocked[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    cand = np.argwhere(~sub) + lo
    if len(cand) == 0:
        return None
    d2 = ((cand - index) ** 2).sum(axis=1)
    ok = d2 <= max_cells * max_cells + 1e-9
    if not ok.any():
        return None
    cand, d2 = cand[ok], d2[ok]
    return cand[np.argmin(d2)]


def astar(
    blocked: np.ndarray, start_index, goal_index, penalty: np.ndarray | None = None, weight: float = 1.0
) -> tuple[np.ndarray, float]:
    """Raw A* over cell indices. Returns (cells, cost in cell units).

    ``penalty`` (nonnegative, per cell) scales the length of every move into
    that cell by ``1 + penalty``; the octile heuristic stays admissible.
    ``weight`` > 1 inflates the heuristic: far fewer expansions, and the cost
    is at most ``weight`` times the optimum.
    """
    if weight < 1.0:
        raise ValueError("heuristic weight must be >= 1")
    if penalty is None:
        penalty = np.zeros(blocked.shape)
    elif np.any(penalty < 0):
        raise ValueError("penalty must be nonnegative")
    cells, cost = _astar(
        np.ascontiguousarray(blocked, dtype=np.bool_),
        np.asarray(start_index, dtype=np.int64),
        np.asarray(goal_index, dtype=np.int64),
        _OFFSETS,
        _COSTS,
        np.ascontiguousarray(penalty, dtype=np.float64),
        float(weight),
    )
    if len(cells) == 0:
        raise NoPathError("goal unreachable")
    return cells, float(cost)


def shortcut(points: np.ndarray, clear) -> np.ndarray:
    """Greedy line-of-sight shortcutting; consecutive points are always kept linked."""
    out = [0]
    i = 0
    n = len(points)
    while i < n - 1:
        nxt = i + 1
        for j in range(n - 1, i + 1, -1):
            if clear(points[i], points[j]):
                nxt = j
                break
        out.append(nxt)
        i = nxt
    return points[out]


def plan(
    grid: VoxelGrid,
    query: PathQuery,
    blocked: np.ndarray | None = None,
    known: np.ndarray | None = None,
    penalty: np.ndarray | None = None,
    shortcut_blocked: np.ndarray | None = None,
    weight: float = 1.0,
) -> np.ndarray:
    """Waypoints from ``query.start`` to ``query.goal`` (inclusive).

    ``blocked`` may carry a precomputed inflated occupancy; ``known`` marks
    observed cells and is only used when unknown space is not traversable.
    ``penalty`` is passed to the search; ``shortcut_blocked`` (a superset of
    the blocked cells) makes shortcuts keep a wider berth than the search.
    ``weight`` inflates the search heuristic (see ``astar``).
    """
    if not grid.contains(query.start) or not grid.contains(query.goal):
        raise NoPathError("start or goal outside grid bounds")
    if blocked is None:
        blocked = inflate(grid, query.inflation)
    if not query.allow_unknown and known is not None:
        blocked = blocked | ~known
    blocked = np.ascontiguousarray(blocked, dtype=np.bool_)
    si = grid.index_of(query.start)
    gi = grid.index_of(query.goal)
    if np.array_equal(si, gi):
        return np.array([query.start])

    start_snapped = False
    if blocked[tuple(si)]:
        snap = nearest_free(blocked, si, 3)
        if snap is None:
            raise NoPathError("start blocked with no free cell within 3 cells")
        si, start_snapped = snap, True
    goal_exact = True
    if blocked[tuple(gi)]:
        snap = nearest_free(blocked, gi, 3)
        if snap is None:
            raise NoPathError("goal blocked with no free cell within 3 cells")
        gi, goal_exact = snap, False

    cells, _ = astar(blocked, si, gi, penalty, weight)
    centers = grid.center_of(cells)
    head = [query.start[None, :]]
    tail = [query.goal[None, :]] if goal_exact else []
    nodes = np.concatenate(head + [centers] + tail)

    origin, res = grid.origin, grid.resolution
    los = blocked if shortcut_blocked is None else np.ascontiguousarray(shortcut_blocked | blocked, dtype=np.bool_)

    def clear(a, b):
        return bool(_segment_clear(los, (a - origin) / res, (b - origin) / res))

    if start_snapped:
        rest = shortcut(nodes[1:], clear)
        return np.concatenate([nodes[:1], rest])
    return shortcut(nodes, clear)


def _walk(points: np.ndarray, start: np.ndarray, distance: float):
    """Point ``distance`` along the polyline from its projection of ``start``.
    Returns (point, remaining distance beyond the end)."""
    seg = np.diff(points, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    best, best_d, best_t = 0, np.inf, 0.0
    for k in range(len(seg)):
        if seglen[k] == 0:
            continue
        t = np.clip((start - points[k]) @ seg[k] / seglen[k] ** 2, 0.0, 1.0)
        d = np.linalg.norm(points[k] + t * seg[k] - start)
        if d < best_d:
            best, best_d, best_t = k, d, t
    remaining = distance
    k, t = best, best_t
    while k < len(seg):
        left = (1.0 - t) * seglen[k]
        if left >= remaining:
            return points[k] + (t + remaining / max(seglen[k], 1e-300)) * seg[k], 0.0
        remaining -= left
        k, t = k + 1, 0.0
    return points[-1].copy(), remaining


def local_goal(
    global_goal,
    position,
    horizon: float = 7.0,
    previous_path: np.ndarray | None = None,
    grid: VoxelGrid | None = None,
    blocked: np.ndarray | None = None,
    snap_radius: float = 1.0,
) -> np.ndarray:
    """Receding-horizon target: the goal itself when within ``horizon``, else a
    point ``horizon`` meters ahead along the previous path (continued straight
    toward the goal past its end), snapped out of known obstacles."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    goal = np.asarray(global_goal, float)
    pos = np.asarray(position, float)
    if np.linalg.norm(goal - pos) <= horizon:
        return goal.copy()
    if previous_path is not None and len(previous_path) >= 2:
        target, rest = _walk(np.asarray(previous_path, float), pos, horizon)
        if rest > 0:
            direction = goal - target
            dist = np.linalg.norm(direction)
            target = goal.copy() if dist <= rest else target + direction / dist * rest
    else:
        direction = goal - pos
        target = pos + direction / np.linalg.norm(direction) * horizon
    if grid is not None:
        occ = grid.occupancy if blocked is None else blocked
        idx = grid.index_of(target)
        if grid.contains_index(idx) and occ[tuple(idx)]:
            snap = nearest_free(occ, idx, snap_radius / grid.resolution)
            if snap is not None:
                target = grid.center_of(snap)
        elif not grid.contains_index(idx):
            target = np.clip(target, grid.origin + 0.5 * grid.resolution, grid.upper - 0.5 * grid.resolution)
    return target
