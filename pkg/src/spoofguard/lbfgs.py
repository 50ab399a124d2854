"""Limited-memory BFGS with a strong-Wolfe line search.

Plain numpy implementation of the two-loop recursion and the bracketing /
zoom line search from Nocedal & Wright (Algorithms 3.5, 3.6, 7.4).  Every
accepted step satisfies the sufficient-decrease condition, so the iterate
loss never increases; the best point ever evaluated is returned.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_fev: int
    message: str
    finite: bool = True
    loss_history: list[float] = field(default_factory=list)  # iterate loss, index 0 = start
    best_history: list[float] = field(default_factory=list)  # best loss seen so far


class _Tracker:
    """Wraps the objective to count calls and remember the best finite point."""

    def __init__(self, fun: Objective):
        self.fun = fun
        self.n_fev = 0
        self.best_f = np.inf
        self.best_x: np.ndarray | None = None
        self.best_g: np.ndarray | None = None

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.n_fev += 1
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            f, g = self.fun(x)
        f = float(f)
        if np.isfinite(f) and np.all(np.isfinite(g)) and f < self.best_f:
            self.best_f, self.best_x, self.best_g = f, x.copy(), g.copy()
        return f, g


def _finite(f: float, g: np.ndarray) -> bool:
    return bool(np.isfinite(f) and np.all(np.isfinite(g)))


def _cubic_min(a, fa, ga, b, fb, gb) -> float | None:
    """Minimizer of the cubic matching values and slopes at a and b."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0 or not np.isfinite(rad):
        return None
    d2 = np.copysign(np.sqrt(rad), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return float(t) if np.isfinite(t) else None


def strong_wolfe(
    fun: _Tracker,
    x: np.ndarray,
    f0: float,
    g0: np.ndarray,
    d: np.ndarray,
    alpha: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_eval: int = 40,
):
    """Return ``(alpha, f, g)`` for an acceptable step, or ``None``.

    A step that only satisfies sufficient decrease is still returned when
    the evaluation budget runs out, so callers always make progress.
    """
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        return None
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fun(x + a * d)
        if not _finite(f, g):
            return np.inf, None, np.nan
        return f, g, float(g @ d)

    def armijo(a, fa):
        return fa <= f0 + c1 * a * dphi0

    def zoom(lo, f_lo, g_lo, dp_lo, hi, f_hi, dp_hi):
        while evals < max_eval:
            width = hi - lo
            t = None
            if np.isfinite(f_hi) and np.isfinite(dp_hi):
                t = _cubic_min(lo, f_lo, dp_lo, hi, f_hi, dp_hi)
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if t is None or not lo_b <= t <= hi_b:
                t = lo + 0.5 * width
            f_t, g_t, dp_t = phi(t)
            if not armijo(t, f_t) or f_t >= f_lo:
                hi, f_hi, dp_hi = t, f_t, dp_t
            else:
                if abs(dp_t) <= -c2 * dphi0:
                    return t, f_t, g_t
                if dp_t * (hi - lo) >= 0:
                    hi, f_hi, dp_hi = lo, f_lo, dp_lo
                lo, f_lo, g_lo, dp_lo = t, f_t, g_t, dp_t
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        if lo > 0:
            return lo, f_lo, g_lo
        return None

    a_prev, f_prev, g_prev, dp_prev = 0.0, f0, g0, dphi0
    a = alpha
    while evals < max_eval:
        f_a, g_a, dp_a = phi(a)
        if not armijo(a, f_a) or (a_prev > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, g_prev, dp_prev, a, f_a, dp_a)
        if abs(dp_a) <= -c2 * dphi0:
            return a, f_a, g_a
        if dp_a >= 0:
            return zoom(a, f_a, g_a, dp_a, a_prev, f_prev, dp_prev)
        a_prev, f_prev, g_prev, dp_prev = a, f_a, g_a, dp_a
        a *= 2.0
    return (a_prev, f_prev, g_prev) if a_prev > 0 else None


def _two_loop(g: np.ndarray, memory: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize_lbfgs(
    fun: Objective,
    x0: np.ndarray,
    max_iter: int = 250,
    history_size: int = 10,
    grad_tol: float = 1e-7,
    callback: Callable[[int, float, float], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops after ``max_iter`` iterations or when the gradient infinity-norm
    drops below ``grad_tol``.  ``callback(iteration, loss, best_loss)`` is
    invoked after every accepted step.
    """
    tracked = _Tracker(fun)
    x = np.array(x0, dtype=np.float64)
    f, g = tracked(x)
    if not _finite(f, g):
        return LbfgsResult(x, f, g, 0, tracked.n_fev, "non-finite objective at the starting point", False, [f], [f])

    memory: deque = deque(maxlen=history_size)
    losses, best = [f], [f]
    message = "iteration limit reached"
    k = 0
    while k < max_iter:
        if np.max(np.abs(g)) < grad_tol:
            message = "gradient tolerance reached"
            break
        d = _two_loop(g, memory)
        if not float(g @ d) < 0:
            memory.clear()
            d = -g
        alpha0 = 1.0 if memory else min(1.0, 1.0 / float(np.linalg.norm(g)))
        step = strong_wolfe(tracked, x, f, g, d, alpha0)
        if step is None and memory:
            memory.clear()
            d = -g
            step = strong_wolfe(tracked, x, f, g, d, min(1.0, 1.0 / float(np.linalg.norm(g))))
        if step is None:
            message = "line search could not find a decreasing step"
            break
        alpha, f_new, g_new = step
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            memory.append((s, y, 1.0 / sy))
        x, f, g = x + s, f_new, g_new
        k += 1
        losses.append(f)
        best.append(min(best[-1], tracked.best_f))
        if callback is not None:
            callback(k, f, best[-1])

    if tracked.best_x is not None and tracked.best_f < f:
        x, f, g = tracked.best_x, tracked.best_f, tracked.best_g
    return LbfgsResult(x, f, g, k, tracked.n_fev, message, True, losses, best)
