"""Marginal log-likelihood of the within-transformed fixed-effects
stochastic frontier with scaled half-normal inefficiency.

Model (production frontier)::

    y_it = alpha_i + x_it beta + v_it - u_it
    u_it = h_it * u_i,   h_it = exp(z_it delta),   u_i ~ N+(0, sigma_u^2)
    v_it ~ N(0, sigma_v^2)

After demeaning, the residual covariance is Pi = sigma_v^2 (I - J/T_i),
which is singular.  Its Moore-Penrose inverse is sigma_v^-2 (I - J/T_i),
so every quadratic form with a demeaned vector reduces to an inner
product divided by sigma_v^2.  No T x T matrix is ever built here.

Parameter packing is ``[beta (p), delta (K), ln sigma_u, ln sigma_v]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import log_ndtr

from .errors import LikelihoodEvaluationError
from .panel import TransformedPanel, demean
from .translog import DEFAULT_LAYOUT, TranslogLayout

LOG_2PI = math.log(2.0 * math.pi)
LOG_HALF = math.log(0.5)
EXP_LIMIT = 700.0
FRONTIERS = {"production": 1.0, "cost": -1.0}


def frontier_sign(frontier: str) -> float:
    try:
        return FRONTIERS[frontier]
    except KeyError:
        raise ValueError(f"frontier must be 'production' or 'cost', got {frontier!r}") from None


def log_norm_cdf(x):
    """ln Phi(x), accurate far into the left tail."""
    return log_ndtr(x)


def mills_ratio(x):
    """phi(x) / Phi(x) without forming Phi for very negative x."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * LOG_2PI - log_ndtr(x))


class Params(NamedTuple):
    beta: np.ndarray
    delta: np.ndarray
    ln_sigma_u: float
    ln_sigma_v: float

    @property
    def sigma_u(self) -> float:
        return math.exp(self.ln_sigma_u)

    @property
    def sigma_v(self) -> float:
        return math.exp(self.ln_sigma_v)


@dataclass(frozen=True)
class ParameterLayout:
    """Names and positions of the packed parameter vector."""

    translog: TranslogLayout = DEFAULT_LAYOUT
    determinants: tuple[str, ...] = ()

    @property
    def n_beta(self) -> int:
        return self.translog.size

    @property
    def n_delta(self) -> int:
        return len(self.determinants)

    @property
    def size(self) -> int:
        return self.n_beta + self.n_delta + 2

    @property
    def names(self) -> tuple[str, ...]:
        return (self.translog.coefficient_names
                + tuple(f"delta_{d}" for d in self.determinants)
                + ("ln_sigma_u", "ln_sigma_v"))

    def pack(self, beta, delta, ln_sigma_u: float, ln_sigma_v: float) -> np.ndarray:
        beta = np.asarray(beta, dtype=float).reshape(-1)
        delta = np.asarray(delta, dtype=float).reshape(-1)
        if beta.size != self.n_beta or delta.size != self.n_delta:
            raise ValueError(f"expected {self.n_beta} betas and {self.n_delta} deltas, "
                             f"got {beta.size} and {delta.size}")
        return np.concatenate([beta, delta, [ln_sigma_u, ln_sigma_v]])

    def unpack(self, theta) -> Params:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector has length {theta.size}, expected {self.size}")
        return split_params(theta, self.n_beta)


def split_params(theta: np.ndarray, n_beta: int) -> Params:
    theta = np.asarray(theta, dtype=float)
    return Params(theta[:n_beta], theta[n_beta:-2], float(theta[-2]), float(theta[-1]))


def layout_for(data: TransformedPanel, translog: TranslogLayout = DEFAULT_LAYOUT) -> ParameterLayout:
    if data.x.shape[1] != translog.size:
        raise ValueError("design width does not match the translog layout")
    return ParameterLayout(translog, tuple(data.determinant_names))


def scaling_values(delta, z) -> np.ndarray:
    """h = exp(z @ delta); refuses to overflow rather than saturating."""
    z = np.asarray(z, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if z.ndim == 1:
        z = z[:, None] if delta.size == 1 else z[None, :]
    index = z @ delta if delta.size else np.zeros(z.shape[0])
    if not np.all(np.isfinite(index)) or np.max(index, initial=-np.inf) > EXP_LIMIT:
        raise LikelihoodEvaluationError("scaling index z*delta overflows exp()")
    return np.exp(index)


def _check_demeaned(v: np.ndarray, tol: float = 1e-8) -> None:
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0))) * len(v)
    if abs(float(np.sum(v))) > tol * scale:
        raise ValueError("vector is not demeaned within tolerance")


def quadratic_form(eps_tilde, sigma_v: float) -> float:
    """eps' Pi^- eps for a demeaned vector."""
    e = np.asarray(eps_tilde, dtype=float)
    _check_demeaned(e)
    return float(e @ e) / sigma_v ** 2


def cross_form(a, b, sigma_v: float) -> float:
    """a' Pi^- b for arbitrary vectors of one panel."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (float(a @ b) - float(a.sum()) * float(b.sum()) / len(a)) / sigma_v ** 2


def mu1_sigma1(eps_tilde, h_tilde, sigma_u: float, sigma_v: float,
               frontier: str = "production") -> tuple[float, float]:
    """Location and scale of the posterior of u_i given the demeaned residuals.

    For the production frontier eps = v - u, so mu1 = -eps'Pi^-h / (h'Pi^-h + 1/sigma_u^2);
    the cost frontier flips the sign of the numerator.
    """
    e = np.asarray(eps_tilde, dtype=float)
    h = np.asarray(h_tilde, dtype=float)
    if e.shape != h.shape:
        raise ValueError("eps_tilde and h_tilde must have equal length")
    _check_demeaned(e)
    _check_demeaned(h)
    precision = cross_form(h, h, sigma_v) + 1.0 / sigma_u ** 2
    mu1 = -frontier_sign(frontier) * cross_form(e, h, sigma_v) / precision
    return mu1, math.sqrt(1.0 / precision)


class PanelTerms(NamedTuple):
    """Per-firm sufficient quantities at one parameter value."""

    loglik: np.ndarray
    mu1: np.ndarray
    sigma1: np.ndarray
    h: np.ndarray
    h_tilde: np.ndarray
    eps_tilde: np.ndarray


def panel_terms(data: TransformedPanel, theta, frontier: str = "production") -> PanelTerms:
    """Vectorised per-firm log-likelihoods and posterior moments."""
    theta = np.asarray(theta, dtype=float)
    p, K = data.x.shape[1], data.z.shape[1]
    if theta.shape != (p + K + 2,):
        raise ValueError(f"parameter vector has length {theta.size}, expected {p + K + 2}")
    sign = frontier_sign(frontier)
    prm = split_params(theta, p)
    if abs(prm.ln_sigma_u) > EXP_LIMIT / 2 or abs(prm.ln_sigma_v) > EXP_LIMIT / 2:
        raise LikelihoodEvaluationError("log standard deviation out of range")

    eps = data.y_tilde - data.x_tilde @ prm.beta
    h = scaling_values(prm.delta, data.z)
    h_tilde, _ = demean(h, data.lengths)
    starts = data.starts
    ee = np.add.reduceat(eps * eps, starts)
    eh = np.add.reduceat(eps * h_tilde, starts)
    hh = np.add.reduceat(h_tilde * h_tilde, starts)

    inv_s2v = math.exp(-2.0 * prm.ln_sigma_v)
    inv_s2u = math.exp(-2.0 * prm.ln_sigma_u)
    precision = hh * inv_s2v + inv_s2u
    mu1 = -sign * eh * inv_s2v / precision
    sigma1 = 1.0 / np.sqrt(precision)
    ratio = mu1 / sigma1
    tm1 = data.lengths - 1
    ll = (-0.5 * tm1 * LOG_2PI - tm1 * prm.ln_sigma_v - 0.5 * ee * inv_s2v
          + 0.5 * ratio * ratio + np.log(sigma1) + log_ndtr(ratio)
          - prm.ln_sigma_u - LOG_HALF)
    if not np.all(np.isfinite(ll)):
        raise LikelihoodEvaluationError("non-finite panel log-likelihood")
    return PanelTerms(ll, mu1, sigma1, h, h_tilde, eps)


def firm_logliks(data: TransformedPanel, theta, frontier: str = "production") -> np.ndarray:
    return panel_terms(data, theta, frontier).loglik


def panel_loglik(data: TransformedPanel, theta, firm: int = 0, frontier: str = "production") -> float:
    """Log-likelihood contribution of a single firm (by position)."""
    return float(firm_logliks(data.select([firm]), theta, frontier)[0])


def total_loglik(data: TransformedPanel, theta, frontier: str = "production") -> float:
    """Sum of firm contributions in fixed firm order, compensated summation."""
    return math.fsum(firm_logliks(data, theta, frontier))


def fd_steps(theta: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-7 * np.abs(theta))


def fd_gradient(fun: Callable[[np.ndarray], float], theta) -> np.ndarray:
    """Central-difference gradient with steps max(1e-6, 1e-7 |theta_j|)."""
    theta = np.asarray(theta, dtype=float)
    steps = fd_steps(theta)
    g = np.empty_like(theta)
    for j, hj in enumerate(steps):
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        g[j] = (fun(up) - fun(dn)) / (up[j] - dn[j])
    return g


def loglik_gradient(data: TransformedPanel, theta, frontier: str = "production") -> np.ndarray:
    return fd_gradient(lambda th: total_loglik(data, th, frontier), theta)


def fd_hessian(grad: Callable[[np.ndarray], np.ndarray], theta, rel_step: float = 1e-4) -> np.ndarray:
    """Jacobian of a gradient by central differences (not symmetrised)."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    H = np.empty((n, n))
    for j in range(n):
        hj = rel_step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        H[:, j] = (grad(up) - grad(dn)) / (up[j] - dn[j])
    return H


def loglik_hessian(data: TransformedPanel, theta, frontier: str = "production") -> np.ndarray:
    return fd_hessian(lambda th: loglik_gradient(data, th, frontier), theta)
