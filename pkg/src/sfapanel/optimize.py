"""BFGS minimiser with a backtracking (Armijo) line search.

Function evaluations that raise :class:`FloatingPointError` (which
includes :class:`~sfapanel.errors.LikelihoodEvaluationError`) or return a
non-finite value are treated as +inf, so the line search backtracks away
from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    history: list[float] = field(default_factory=list)


def _safe(fun: Callable[[np.ndarray], float], x: np.ndarray) -> float:
    try:
        val = float(fun(x))
    except (FloatingPointError, OverflowError, ValueError):
        return np.inf
    return val if np.isfinite(val) else np.inf


def bfgs(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0,
    *,
    gtol: float = 1e-6,
    xtol: float = 1e-9,
    max_iter: int = 500,
    max_step: float = 1.0,
    c1: float = 1e-4,
    max_backtracks: int = 60,
) -> OptimizeOutcome:
    """Minimise ``fun``.  Converged means max |grad| <= gtol."""
    x = np.array(x0, dtype=float)
    fx = _safe(fun, x)
    if not np.isfinite(fx):
        raise FloatingPointError("objective is not finite at the starting point")
    g = grad(x)
    n = x.size
    Hinv = np.eye(n)
    fresh = True
    history = [fx]
    message = "iteration limit reached"
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            return OptimizeOutcome(x, fx, g, it - 1, True, "gradient tolerance met", history)
        d = -Hinv @ g
        slope = float(g @ d)
        if not slope < 0:
            Hinv = np.eye(n)
            fresh = True
            d = -g
            slope = float(g @ d)
        big = np.max(np.abs(d))
        if big > max_step:
            d *= max_step / big
            slope = float(g @ d)

        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + alpha * d
            f_new = _safe(fun, x_new)
            if f_new <= fx + c1 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if not fresh:
                Hinv = np.eye(n)
                fresh = True
                continue
            message = "line search failed"
            break

        s = x_new - x
        g_new = grad(x_new)
        y = g_new - g
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                Hinv = np.eye(n) * (sy / float(y @ y))
                fresh = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                    + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
        if np.max(np.abs(s) / np.maximum(1.0, np.abs(x))) < xtol:
            message = "parameter tolerance reached"
            break
    converged = bool(np.max(np.abs(g)) <= gtol)
    if converged:
        message = "gradient tolerance met"
    return OptimizeOutcome(x, fx, g, it, converged, message, history)
