"""Limited-memory BFGS with a strong-Wolfe line search."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    status: str  # "grad_tol", "rel_decrease", "max_iters", "line_search_failed"
    history: list[dict] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("grad_tol", "rel_decrease")


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb); None if it does not exist."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(
    fun: Objective,
    x: np.ndarray,
    f0: float,
    g0: np.ndarray,
    direction: np.ndarray,
    step0: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
):
    """Bracketing + zoom line search. Returns (step, f, g) or None on failure."""
    dg0 = float(g0 @ direction)
    if dg0 >= 0:
        return None

    def phi(a):
        f, g = fun(x + a * direction)
        return f, g, float(g @ direction)

    def zoom(lo, flo, dlo, glo, hi, fhi, dhi, evals):
        while evals < max_evals:
            a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            width = abs(hi - lo)
            if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
                a = 0.5 * (lo + hi)
            fa, ga, da = phi(a)
            evals += 1
            if fa > f0 + c1 * a * dg0 or fa >= flo:
                hi, fhi, dhi = a, fa, da
            else:
                if abs(da) <= -c2 * dg0:
                    return a, fa, ga
                if da * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo, glo = a, fa, da, ga
            if abs(hi - lo) < 1e-14 * max(1.0, abs(lo)):
                break
        if lo > 0 and flo < f0:
            return lo, flo, glo
        return None

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, dg0, g0
    a = step0
    evals = 0
    while evals < max_evals:
        fa, ga, da = phi(a)
        evals += 1
        if not np.isfinite(fa):
            a = 0.5 * (a_prev + a)
            continue
        if fa > f0 + c1 * a * dg0 or (evals > 1 and fa >= f_prev):
            return zoom(a_prev, f_prev, d_prev, g_prev, a, fa, da, evals)
        if abs(da) <= -c2 * dg0:
            return a, fa, ga
        if da >= 0:
            return zoom(a, fa, da, ga, a_prev, f_prev, d_prev, evals)
        a_prev, f_prev, d_prev, g_prev = a, fa, da, ga
        a = 2.0 * a
    return None


def minimize(
    fun: Objective,
    x0,
    memory: int = 8,
    max_iters: int = 100,
    grad_tol: float = 1e-4,
    rel_tol: float = 1e-8,
    callback: Callable[[int, np.ndarray, float, np.ndarray, float], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops when the gradient infinity norm drops below ``grad_tol``, when the
    relative decrease of an accepted step is below ``rel_tol``, after
    ``max_iters`` iterations, or when the line search fails (the best iterate is
    returned with status ``"line_search_failed"``).
    """
    x = np.array(x0, dtype=float).ravel()
    f, g = fun(x)
    s_hist: deque[np.ndarray] = deque(maxlen=memory)
    y_hist: deque[np.ndarray] = deque(maxlen=memory)
    rho_hist: deque[float] = deque(maxlen=memory)
    history = [{"iteration": 0, "f": f, "grad_norm": float(np.max(np.abs(g), initial=0.0)), "step": 0.0}]
    if callback:
        callback(0, x, f, g, 0.0)

    status = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g), initial=0.0) < grad_tol:
            status = "grad_tol"
            it -= 1
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            gamma = 1.0 / max(np.linalg.norm(g), 1e-12)
        r = gamma * q
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        direction = -r
        if direction @ g >= 0:  # lost descent; restart from steepest descent
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            direction = -g / max(np.linalg.norm(g), 1e-12)

        found = strong_wolfe(fun, x, f, g, direction)
        if found is None:
            status = "line_search_failed"
            it -= 1
            break
        step, f_new, g_new = found
        s_vec = step * direction
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
        rel = (f - f_new) / max(abs(f), abs(f_new), 1e-300)
        x = x + s_vec
        f, g = f_new, g_new
        history.append({"iteration": it, "f": f, "grad_norm": float(np.max(np.abs(g))), "step": float(step)})
        if callback:
            callback(it, x, f, g, float(step))
        if np.max(np.abs(g)) < grad_tol:
            status = "grad_tol"
            break
        if rel < rel_tol:
            status = "rel_decrease"
            break
    return LbfgsResult(x, f, g, it, status, history)
