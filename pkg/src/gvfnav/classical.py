"""Analytic guiding vector fields for implicitly defined paths.

Used as the reference against which the grid-based field is checked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class DivergenceError(RuntimeError):
    """Integrated state left the safety box."""


@dataclass(frozen=True)
class ImplicitPath:
    """Path given as the common zero set of ``dimension - 1`` level functions.

    ``levels(xi)`` returns shape (n-1,), ``gradients(xi)`` shape (n-1, n),
    ``distance(xi)`` the Euclidean distance to the zero set.
    """

    dimension: int
    levels: Callable[[np.ndarray], np.ndarray]
    gradients: Callable[[np.ndarray], np.ndarray]
    distance: Callable[[np.ndarray], float]
    gains: tuple[float, ...]
    name: str = ""

    @classmethod
    def circle2d(cls, radius: float = 1.0, k: float = 1.0) -> "ImplicitPath":
        return cls(
            2,
            lambda p: np.array([p[0] ** 2 + p[1] ** 2 - radius**2]),
            lambda p: np.array([[2 * p[0], 2 * p[1]]]),
            lambda p: abs(float(np.hypot(p[0], p[1])) - radius),
            (k,),
            "circle2d",
        )

    @classmethod
    def line2d(cls, point=(0.0, 0.0), direction=(1.0, 0.0), k: float = 1.0) -> "ImplicitPath":
        """Straight line through ``point``; phi is the signed offset to its left normal."""
        p0 = np.asarray(point, float)
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        nrm = np.array([-d[1], d[0]])
        return cls(
            2,
            lambda p: np.array([nrm @ (np.asarray(p) - p0)]),
            lambda p: nrm[None, :].copy(),
            lambda p: abs(float(nrm @ (np.asarray(p) - p0))),
            (k,),
            "line2d",
        )

    @classmethod
    def circle3d(cls, radius: float = 1.0, height: float = 0.0, k1: float = 1.0, k2: float = 1.0) -> "ImplicitPath":
        return cls(
            3,
            lambda p: np.array([p[0] ** 2 + p[1] ** 2 - radius**2, p[2] - height]),
            lambda p: np.array([[2 * p[0], 2 * p[1], 0.0], [0.0, 0.0, 1.0]]),
            lambda p: float(np.hypot(np.hypot(p[0], p[1]) - radius, p[2] - height)),
            (k1, k2),
            "circle3d",
        )


def propagation_term(path: ImplicitPath, xi) -> np.ndarray:
    """Generalized cross product of the level-function gradients."""
    grads = path.gradients(np.asarray(xi, float))
    if path.dimension == 2:
        gx, gy = grads[0]
        return np.array([-gy, gx])
    if path.dimension == 3:
        return np.cross(grads[0], grads[1])
    raise ValueError("only 2-D and 3-D paths are supported")


def convergence_term(path: ImplicitPath, xi) -> np.ndarray:
    xi = np.asarray(xi, float)
    phi = path.levels(xi)
    grads = path.gradients(xi)
    return -(np.asarray(path.gains)[:, None] * phi[:, None] * grads).sum(axis=0)


def composite_field(path: ImplicitPath, xi) -> np.ndarray:
    """Propagation plus gain-weighted convergence term (unnormalized)."""
    return propagation_term(path, xi) + convergence_term(path, xi)


def normalized_field(
    path: ImplicitPath,
    xi,
    k: float | Callable[[np.ndarray], float] = 1.0,
    eps: float = 1e-9,
) -> np.ndarray:
    """Unit tangent plus ``k(xi)`` times unit normal, both guarded by ``eps``."""
    t = propagation_term(path, xi)
    n = convergence_term(path, xi)
    t_hat = t / max(np.linalg.norm(t), eps)
    n_hat = n / max(np.linalg.norm(n), eps)
    gain = k(np.asarray(xi, float)) if callable(k) else k
    return t_hat + gain * n_hat


@dataclass
class IntegralCurve:
    times: np.ndarray
    states: np.ndarray
    distances: np.ndarray


def integrate_field(
    path: ImplicitPath,
    xi0,
    step: float = 1e-3,
    horizon: float = 10.0,
    field: str = "composite",
    k: float = 1.0,
    safety_box: float = 1e3,
) -> IntegralCurve:
    """Fixed-step RK4 integration of ``xi' = chi(xi)``.

    ``field`` selects the composite (unnormalized) or normalized construction.
    Raises DivergenceError if any coordinate exceeds ``safety_box`` in magnitude
    or becomes non-finite.
    """
    if not 0 < step <= 0.05:
        raise ValueError("step must lie in (0, 0.05]")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if field == "composite":
        rhs = lambda p: composite_field(path, p)  # noqa: E731
    elif field == "normalized":
        rhs = lambda p: normalized_field(path, p, k)  # noqa: E731
    else:
        raise ValueError(f"unknown field {field!r}")

    n = int(round(horizon / step))
    states = np.empty((n + 1, path.dimension))
    states[0] = np.asarray(xi0, float)
    x = states[0].copy()
    for i in range(n):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * step * k1)
        k3 = rhs(x + 0.5 * step * k2)
        k4 = rhs(x + step * k3)
        x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > safety_box:
            raise DivergenceError(f"state {x} left the safety box at t={(i + 1) * step:.3f}s")
        states[i + 1] = x
    times = np.arange(n + 1) * step
    distances = np.array([path.distance(s) for s in states])
    return IntegralCurve(times, states, distances)
