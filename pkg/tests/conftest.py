import numpy as np
import pytest
from scipy.spatial import cKDTree


def brute_force_distance(occupancy: np.ndarray, resolution: float) -> np.ndarray:
    """Min over all occupied cells, exhaustive pairwise (small grids only)."""
    occ_idx = np.argwhere(occupancy).astype(float)
    all_idx = np.indices(occupancy.shape).reshape(3, -1).T.astype(float)
    best = np.full(len(all_idx), np.inf)
    for chunk in np.array_split(occ_idx, max(1, len(occ_idx) // 256)):
        d2 = ((all_idx[:, None, :] - chunk[None, :, :]) ** 2).sum(-1).min(axis=1)
        best = np.minimum(best, d2)
    return (np.sqrt(best) * resolution).reshape(occupancy.shape)


def kdtree_distance(occupancy: np.ndarray, resolution: float) -> np.ndarray:
    """Exact nearest-occupied-cell distance via a k-d tree."""
    tree = cKDTree(np.argwhere(occupancy).astype(float))
    all_idx = np.indices(occupancy.shape).reshape(3, -1).T.astype(float)
    d, _ = tree.query(all_idx)
    return (d * resolution).reshape(occupancy.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def polyline_distance(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Exact distance from each query to a polyline (segment projection)."""
    a = points[:-1][None]
    ab = np.diff(points, axis=0)[None]
    q = np.atleast_2d(queries)[:, None]
    t = np.clip(((q - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-300), 0.0, 1.0)
    return np.linalg.norm(a + t[..., None] * ab - q, axis=-1).min(axis=1)


def circle_points(radius=3.0, spacing=0.05, z=0.0):
    """Counterclockwise samples starting at angle 0, open (last point before 2 pi)."""
    n = int(round(2 * np.pi * radius / spacing))
    th = np.arange(n) * 2 * np.pi / n
    return np.stack([radius * np.cos(th), radius * np.sin(th), np.full(n, z)], axis=1)


def s_curve_points(spacing=0.05, length=24.0, amplitude=1.5, wavelength=8.0, z=0.0):
    """Sine-shaped planar curve along +x sampled at near-uniform arc length."""
    x = np.linspace(0.0, length, 20000)
    y = amplitude * np.sin(2 * np.pi * x / wavelength)
    pts = np.stack([x, y, np.full_like(x, z)], axis=1)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    targets = np.arange(0.0, s[-1], spacing)
    return np.stack([np.interp(targets, s, pts[:, a]) for a in range(3)], axis=1)


ACCEPTANCE: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> None:
    """Record and print one line per acceptance criterion, then assert it."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
