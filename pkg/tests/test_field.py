import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import circle_points, polyline_distance, s_curve_points
from gvfnav.bspline import PathPoints
from gvfnav.classical import ImplicitPath, normalized_field
from gvfnav.field import (
    DegenerateTangentError,
    GuidingField,
    build_guiding_field,
    follow,
    shape,
    slice_rows,
    write_field_slice,
)
from gvfnav.grid import OutOfBoundsError, fit_gradient, sample_distance


def _angle(a, b):
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return np.degrees(np.arccos(np.clip(c, -1, 1)))


@pytest.fixture(scope="module")
def straight():
    # points on cell centers of a 0.1 m lattice anchored at multiples of 0.1
    xs = np.arange(0.05, 10.0, 0.05)
    pts = np.stack([xs, np.full_like(xs, 0.05), np.full_like(xs, 0.05)], axis=1)
    return build_guiding_field(pts, 0.1, margin=2.0)


@pytest.fixture(scope="module")
def circle():
    return build_guiding_field(circle_points(3.0, 0.05), 0.05, margin=[1.5, 1.5, 1.0])


def test_shape_values():
    assert shape(0.0, 1.0) == 0.0
    assert shape(1.0, 1.0) == pytest.approx(0.761594, abs=1e-6)
    assert shape(10.0, 1.0) > 0.9999
    d = np.linspace(0, 5, 50)
    assert np.all(np.diff(shape(d, 0.7)) > 0)
    with pytest.raises(ValueError):
        shape(1.0, 0.0)


def test_nearest_index_exact_and_tie(straight):
    pts = straight.points
    assert straight.nearest_index(pts[3]) == 3
    assert straight.nearest_index(0.5 * (pts[2] + pts[3])) == 3


def test_nearest_index_vs_scan(circle, rng):
    q = rng.uniform([-4.5, -4.5, -0.5], [4.5, 4.5, 0.5], (1000, 3))
    pts = circle.points
    for x in q:
        d2 = ((pts - x) ** 2).sum(axis=1)
        assert circle.nearest_index(x) == np.flatnonzero(d2 == d2.min())[-1]


def test_tangent_straight_and_boundary(straight):
    pts = straight.points
    assert np.allclose(straight.tangent(pts[50]), [1, 0, 0], atol=1e-12)
    assert np.allclose(straight.tangent(pts[0] - [0.3, 0, 0]), [1, 0, 0], atol=1e-12)
    assert np.allclose(straight.tangent(pts[-1] + [0.3, 0, 0]), [1, 0, 0], atol=1e-12)


def test_tangent_corner():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 2, 0]], float)
    f = build_guiding_field(pts, 0.1, margin=1.0)
    assert np.allclose(f.tangent([1.0, 0.0, 0.0]), [np.sqrt(0.5), np.sqrt(0.5), 0], atol=1e-12)


def test_tangent_reversal_is_an_error():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0]], float)
    f = GuidingField(PathPoints(pts, 0.1), build_guiding_field(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), 0.1, 1.0).u_field)
    with pytest.raises(DegenerateTangentError):
        f.tangent([1.0, 0.2, 0.0])


def test_normal_straight_path(straight):
    for offset in (0.3, 0.5, 1.0):
        n = straight.normal([5.0, 0.05 + offset, 0.05])
        assert _angle(n, np.array([0, -1.0, 0])) < 5.0
    # the example point from the contract
    assert _angle(straight.normal([5.0, 1.0, 0.0]), np.array([0, -1.0, 0])) < 5.0


def test_normal_none_on_path(straight):
    assert straight.normal([5.05, 0.05, 0.05]) is None


def test_normal_circle_inward(circle, rng):
    for _ in range(20):
        th = rng.uniform(0, 2 * np.pi)
        for rad in (2.5, 3.5):
            xi = np.array([rad * np.cos(th), rad * np.sin(th), 0.0])
            toward = np.array([np.cos(th), np.sin(th), 0.0]) * np.sign(3.0 - rad)
            assert _angle(circle.normal(xi), toward) < 10.0


def test_normal_out_of_bounds(straight):
    with pytest.raises(OutOfBoundsError):
        straight.normal([50.0, 0.0, 0.0])
    with pytest.raises(OutOfBoundsError):
        straight.guide([50.0, 0.0, 0.0])


def test_kernel_matches_reference_routes(circle, rng):
    """numba kernel vs the pure fitting and sampling routines"""
    for _ in range(50):
        xi = rng.uniform([-4, -4, -0.5], [4, 4, 0.5])
        g = fit_gradient(circle.u_field, xi)
        n = circle.normal(xi)
        if n is not None:
            assert np.allclose(n, -g / np.linalg.norm(g), atol=1e-12)
        assert circle.distance(xi) == pytest.approx(sample_distance(circle.u_field, xi), abs=1e-12)


def test_guide_on_path(straight):
    assert np.array_equal(straight.guide([5.05, 0.05, 0.05]), [1.5, 0.0, 0.0])


def test_guide_at_bandwidth(straight):
    chi = straight.guide([5.05, 1.05, 0.05])
    assert np.dot(chi, chi) == pytest.approx(1.5**2 + (1.5 * np.tanh(1.0)) ** 2, rel=1e-9)


def test_guide_far_saturates(straight):
    chi = straight.guide([5.05, 1.95, 0.05])
    normal_part = chi - 1.5 * np.array([1, 0, 0])
    assert np.linalg.norm(normal_part) <= 1.5 and np.linalg.norm(normal_part) > 1.5 * np.tanh(1.8)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.5, 25.5), st.floats(-3.0, 3.0), st.floats(-1.0, 1.0))
def test_guide_bounded(x, y, z):
    f = _s_field()
    chi, _, status = f.guide_many([x, y, z])
    if status[0] < 2:
        assert np.linalg.norm(chi[0]) <= f.K1 + f.K2 + 1e-12


_S = {}


def _s_field():
    if "f" not in _S:
        _S["f"] = build_guiding_field(s_curve_points(0.05, 24.0), 0.1, margin=[2.0, 2.0, 1.0])
    return _S["f"]


def test_on_path_propagation(straight, rng):
    res = straight.u_field.resolution
    bound = straight.K2 * np.tanh(res / (2 * straight.r)) + 1e-12
    checked = 0
    for _ in range(400):
        offset = rng.uniform(-0.5, 0.5, 2) * res
        if rng.random() < 0.5:
            offset[rng.integers(2)] = 0.0  # lattice-axis offsets: interpolated distance is exact
        xi = np.array([rng.uniform(1, 9), 0.05 + offset[0], 0.05 + offset[1]])
        if straight.distance(xi) > res / 2:
            # diagonal offsets: bilinear reading of the cone overshoots the true distance
            assert np.hypot(*offset) > res / 2 / 1.27
            continue
        checked += 1
        assert np.linalg.norm(straight.guide(xi) - straight.K1 * straight.tangent(xi)) <= bound
    assert checked > 200


def test_circle_agrees_with_analytic(circle, rng):
    ref = ImplicitPath.circle2d(3.0)
    k1, k2, r = circle.K1, circle.K2, circle.r
    for _ in range(30):
        th = rng.uniform(0, 2 * np.pi)
        rad = 3.0 + rng.choice([-1, 1]) * rng.uniform(0.2, 1.0)
        xi = np.array([rad * np.cos(th), rad * np.sin(th), 0.0])
        chi = circle.guide(xi)
        gain = lambda p: (k2 / k1) * np.tanh(ref.distance(p) / r)  # noqa: E731
        expect = normalized_field(ref, xi[:2], gain)
        assert _angle(chi[:2], expect) < 10.0


def test_follow_converges_circle(circle, rng):
    pts = circle.points
    res = circle.u_field.resolution
    for _ in range(3):
        th = rng.uniform(0, 2 * np.pi)
        xi0 = np.array([4.2 * np.cos(th), 4.2 * np.sin(th), 0.3])
        t, states = follow(circle, xi0, horizon=10.0, stop_at_end=False)
        d = polyline_distance(pts, states)
        inside = np.flatnonzero(d < 2 * res)
        assert len(inside) and t[inside[0]] <= 10.0
        assert d[inside[0] :].max() < 3 * res


def test_determinism(circle):
    xi = np.array([2.1, 1.7, 0.2])
    assert circle.guide(xi).tobytes() == circle.guide(xi.copy()).tobytes()


def test_build_rejects_small_margin():
    with pytest.raises(ValueError):
        build_guiding_field(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), 0.1, margin=0.5)


def test_slice_rows_count_and_path_row(tmp_path, straight):
    rows = slice_rows(straight, 0.05, 0.25, lo=(0.0, -1.0), hi=(10.0, 1.0))
    assert len(rows) == (10 / 0.25 + 1) * (2 / 0.25 + 1)
    n = write_field_slice(straight, 0.05, 0.25, tmp_path / "s.csv", lo=(0.0, -1.0), hi=(10.0, 1.0))
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "x,y,chi_x,chi_y,d" and len(lines) == n + 1
    on_row = slice_rows(straight, 0.05, 0.1, lo=(2.05, 0.05), hi=(8.05, 0.05))
    assert np.allclose(on_row[:, 3], 0.0, atol=1e-12) and np.all(on_row[:, 2] > 0)
    # points outside the field come back as NaN
    far = slice_rows(straight, 0.05, 1.0, lo=(-10.0, 0.0), hi=(-9.0, 0.0))
    assert np.all(np.isnan(far[:, 2:]))
