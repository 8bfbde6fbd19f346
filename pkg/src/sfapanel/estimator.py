"""Maximum-likelihood driver: starting values, multistart quasi-Newton
maximisation, observed-information standard errors, delta method."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import likelihood as lik
from .errors import EstimationError, SchemaError
from .optimize import bfgs
from .panel import PanelDataset, TransformedPanel, estimation_set, within_transform
from .postestimation import FIXED_EFFECT_VARIANTS, fixed_effects
from .translog import TranslogLayout, design_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimationConfig:
    max_iterations: int = 500
    gtol: float = 1e-6          # on max |gradient_j|
    xtol: float = 1e-9          # relative step
    multistart: int = 3
    seed: int = 0
    frontier: str = "production"
    fixed_effects: str = "corrected"
    base_year: Optional[int] = None

    def __post_init__(self):
        if self.gtol <= 0 or self.xtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.multistart < 1:
            raise ValueError("max_iterations and multistart must be at least 1")
        lik.frontier_sign(self.frontier)
        if self.fixed_effects not in FIXED_EFFECT_VARIANTS:
            raise ValueError(f"fixed_effects must be one of {FIXED_EFFECT_VARIANTS}")


def translog_layout_of(data: TransformedPanel) -> TranslogLayout:
    names = data.design_names
    if not names:
        return TranslogLayout()
    inputs = tuple(n[3:] for n in names[: names.index("t")])
    return TranslogLayout(inputs)


def parameter_layout(data: TransformedPanel) -> lik.ParameterLayout:
    return lik.ParameterLayout(translog_layout_of(data), tuple(data.determinant_names))


def prepare(data: PanelDataset, base_year: Optional[int] = None,
            determinants: Optional[Sequence[str]] = None) -> TransformedPanel:
    """Translog design + within transformation on the estimation set.

    Time offsets are ``year - base_year`` (default: first year in the data).
    Without ``determinants``, those constant over the estimation set are
    dropped, since they only rescale u_i and are confounded with sigma_u.
    With it, exactly the named determinants are kept, in that order (used
    to rebuild the design of a saved model).
    """
    data = estimation_set(data)
    base = data.first_year if base_year is None else base_year
    arr = data.arrays
    layout = TranslogLayout(data.schema.input_names)
    X = design_matrix(arr.log_inputs, arr.years - base, layout)
    tp = within_transform(data, X, design_names=layout.column_names)
    names = tuple(tp.determinant_names)
    if determinants is not None:
        missing = [d for d in determinants if d not in names]
        if missing:
            raise SchemaError(f"determinant(s) {missing} are not bound in the data schema")
        keep = [names.index(d) for d in determinants]
    else:
        keep = [k for k in range(tp.z.shape[1]) if np.ptp(tp.z[:, k]) > 0]
        dropped = [names[k] for k in range(tp.z.shape[1]) if k not in keep]
        if dropped:
            log.warning("dropping constant determinant(s): %s", ", ".join(dropped))
    if keep != list(range(len(names))):
        tp = dataclasses.replace(tp, z=tp.z[:, keep], determinant_names=tuple(names[k] for k in keep))
    return tp


def _offending_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    basis: list[int] = []
    bad = []
    for j in range(X.shape[1]):
        cand = basis + [j]
        if np.linalg.matrix_rank(X[:, cand]) == len(cand):
            basis = cand
        else:
            bad.append(names[j] if j < len(names) else f"column {j}")
    return bad


def initial_values(data: TransformedPanel) -> np.ndarray:
    """Pooled within-OLS betas, zero deltas, ln sigma_u = ln sigma_v = ln residual sd."""
    X, y = data.x_tilde, data.y_tilde
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        bad = _offending_columns(X, data.design_names)
        raise EstimationError(f"rank-deficient demeaned design; collinear column(s): {', '.join(bad)}")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = data.n_obs - data.n_firms - p
    sd = math.sqrt(float(resid @ resid) / (dof if dof > 0 else data.n_obs))
    ln_sd = math.log(max(sd, 1e-8))
    return np.concatenate([beta, np.zeros(data.z.shape[1]), [ln_sd, ln_sd]])


@dataclass
class StandardErrors:
    stderr: Optional[np.ndarray]
    covariance: Optional[np.ndarray]
    hessian: np.ndarray              # of the log-likelihood, symmetrised
    asymmetry: float                 # max |H_ij - H_ji| / max |H|
    condition_number: float
    positive_definite: bool


def standard_errors(data: TransformedPanel, theta, frontier: str = "production") -> StandardErrors:
    """sqrt(diag(inverse observed information)) on the packed scale.

    When the negative Hessian is not positive definite the standard errors
    are withheld (``stderr is None``) and the flag is cleared.
    """
    H_raw = lik.loglik_hessian(data, theta, frontier)
    scale = float(np.max(np.abs(H_raw))) or 1.0
    asym = float(np.max(np.abs(H_raw - H_raw.T))) / scale
    H = 0.5 * (H_raw + H_raw.T)
    info = -H
    cond = float(np.linalg.cond(info))
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        log.warning("observed information is not positive definite; standard errors withheld")
        return StandardErrors(None, None, H, asym, cond, False)
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return StandardErrors(np.sqrt(np.diag(cov)), cov, H, asym, cond, True)


def delta_method(func: Callable[[np.ndarray], np.ndarray], theta, covariance, step: float = 1e-6):
    """Value and standard errors of func(theta) by first-order propagation."""
    theta = np.asarray(theta, dtype=float)
    value = np.atleast_1d(np.asarray(func(theta), dtype=float))
    J = np.empty((value.size, theta.size))
    for j in range(theta.size):
        hj = step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        J[:, j] = (np.atleast_1d(func(up)) - np.atleast_1d(func(dn))) / (2 * hj)
    cov = J @ np.asarray(covariance) @ J.T
    return value, np.sqrt(np.diag(cov))


def sigma_from_log(ln_sigma: float, se_ln_sigma: float) -> tuple[float, float]:
    s = math.exp(ln_sigma)
    return s, s * se_ln_sigma


def percent_effect(delta: float, se_delta: float) -> tuple[float, float]:
    """Proportional change in inefficiency 1 - exp(delta) and its standard error."""
    return 1.0 - math.exp(delta), math.exp(delta) * se_delta


def p_value(estimate: float, se: float) -> float:
    if not (se > 0 and math.isfinite(se)):
        return float("nan")
    return float(2.0 * stats.norm.sf(abs(estimate / se)))


@dataclass
class EstimationResult:
    params: np.ndarray
    stderr: Optional[np.ndarray]
    loglik: float
    converged: bool
    iterations: int
    layout: lik.ParameterLayout
    gradient: np.ndarray
    message: str = ""
    start_index: int = 0
    failed_starts: int = 0
    information_pd: bool = False
    condition_number: float = float("nan")
    hessian_asymmetry: float = float("nan")
    covariance: Optional[np.ndarray] = None
    firm_ids: tuple[str, ...] = ()
    fixed_effects: Optional[np.ndarray] = None
    n_obs: int = 0
    base_year: Optional[int] = None
    frontier: str = "production"
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names

    @property
    def n_firms(self) -> int:
        return len(self.firm_ids)

    @property
    def max_abs_gradient(self) -> float:
        return float(np.max(np.abs(self.gradient)))

    def unpack(self) -> lik.Params:
        return self.layout.unpack(self.params)

    def named(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.params)))

    def se_of(self, name: str) -> float:
        if self.stderr is None:
            return float("nan")
        return float(self.stderr[self.names.index(name)])

    def to_dict(self) -> dict:
        se = self.stderr
        params = {}
        for j, name in enumerate(self.names):
            est = float(self.params[j])
            s = float(se[j]) if se is not None else None
            params[name] = {"estimate": est, "stderr": s,
                            "p_value": p_value(est, s) if s is not None else None}
        return {
            "inputs": list(self.layout.translog.inputs),
            "determinants": list(self.layout.determinants),
            "params": params,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
            "start_index": self.start_index,
            "failed_starts": self.failed_starts,
            "max_abs_gradient": self.max_abs_gradient,
            "information_positive_definite": self.information_pd,
            "condition_number": self.condition_number,
            "hessian_asymmetry": self.hessian_asymmetry,
            "n_firms": self.n_firms,
            "n_obs": self.n_obs,
            "base_year": self.base_year,
            "frontier": self.frontier,
            "fixed_effects": (None if self.fixed_effects is None else
                              {fid: float(a) for fid, a in zip(self.firm_ids, self.fixed_effects)}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        layout = lik.ParameterLayout(TranslogLayout(tuple(d["inputs"])), tuple(d["determinants"]))
        params = np.array([d["params"][n]["estimate"] for n in layout.names])
        ses = [d["params"][n]["stderr"] for n in layout.names]
        stderr = None if any(s is None for s in ses) else np.array(ses, dtype=float)
        fe = d.get("fixed_effects") or {}
        return cls(
            params=params, stderr=stderr, loglik=d["loglik"], converged=d["converged"],
            iterations=d["iterations"], layout=layout,
            gradient=np.full(params.size, d.get("max_abs_gradient", np.nan)),
            message=d.get("message", ""), information_pd=d.get("information_positive_definite", False),
            firm_ids=tuple(fe), fixed_effects=np.array(list(fe.values())) if fe else None,
            n_obs=d.get("n_obs", 0), base_year=d.get("base_year"), frontier=d.get("frontier", "production"),
        )


def _start_points(theta0: np.ndarray, data: TransformedPanel, config: EstimationConfig) -> list[np.ndarray]:
    K = data.z.shape[1]
    p = data.x.shape[1]
    z_sd = np.std(data.z, axis=0) if K else np.zeros(0)
    starts = [theta0]
    for k in range(1, config.multistart):
        rng = np.random.default_rng([config.seed, k])
        th = theta0.copy()
        if K:
            th[p:p + K] = rng.normal(0.0, 0.2, size=K) / np.maximum(z_sd, 1e-8)
        th[-2] = theta0[-1] + rng.normal(0.0, 0.5)
        th[-1] = theta0[-1] + rng.normal(0.0, 0.2)
        starts.append(th)
    return starts


def _newton_polish(data: TransformedPanel, out, config: EstimationConfig, max_steps: int = 8):
    """Finish a stalled BFGS run with damped Newton steps on the FD Hessian."""
    frontier = config.frontier
    x, fx, g = out.x, out.fun, out.grad
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= config.gtol:
            break
        H = -lik.loglik_hessian(data, x, frontier)   # Hessian of the objective
        H = 0.5 * (H + H.T)
        try:
            np.linalg.cholesky(H)
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        # Near the optimum the predicted decrease is below the rounding of f,
        # so a step within that noise is accepted when it shrinks the gradient.
        noise = 1e-10 * max(1.0, abs(fx))
        alpha, moved = 1.0, False
        for _ in range(30):
            cand = x + alpha * step
            try:
                fc = -lik.total_loglik(data, cand, frontier)
            except FloatingPointError:
                fc = np.inf
            if fc <= fx + 1e-4 * alpha * float(g @ step):
                gc = -lik.loglik_gradient(data, cand, frontier)
                moved = True
                break
            if fc <= fx + noise:
                gc = -lik.loglik_gradient(data, cand, frontier)
                if np.max(np.abs(gc)) < np.max(np.abs(g)):
                    moved = True
                    break
            alpha *= 0.5
        if not moved:
            break
        x, fx, g = cand, fc, gc
        out.history.append(fx)
        out.iterations += 1
    out.x, out.fun, out.grad = x, fx, g
    out.converged = bool(np.max(np.abs(g)) <= config.gtol)
    if out.converged:
        out.message = "gradient tolerance met"
    return out


def maximize(data: TransformedPanel, config: EstimationConfig = EstimationConfig(),
             start: Optional[np.ndarray] = None) -> EstimationResult:
    """Best of the multistart BFGS runs.

    Start 0 is :func:`initial_values` (or ``start``); the others perturb
    deltas and the log standard deviations.  Ties in log-likelihood
    (within 1e-8) go to the smaller gradient.
    """
    layout = parameter_layout(data)
    frontier = config.frontier

    def neg(th):
        return -lik.total_loglik(data, th, frontier)

    def neg_grad(th):
        return -lik.loglik_gradient(data, th, frontier)

    theta0 = initial_values(data) if start is None else np.asarray(start, dtype=float)
    starts = [theta0] if start is not None else _start_points(theta0, data, config)
    runs = []
    trace = []
    for k, x0 in enumerate(starts):
        try:
            out = bfgs(neg, neg_grad, x0, gtol=config.gtol, xtol=config.xtol,
                       max_iter=config.max_iterations)
        except FloatingPointError as exc:
            trace.append(f"start {k}: {exc}")
            continue
        if not out.converged and math.isfinite(out.fun):
            out = _newton_polish(data, out, config)
        if not math.isfinite(out.fun):
            trace.append(f"start {k}: non-finite optimum")
            continue
        trace.append(f"start {k}: loglik={-out.fun:.10g} {out.message}")
        runs.append((k, out))
    if not runs:
        raise EstimationError("no start produced a finite likelihood:\n" + "\n".join(trace))

    best_k, best = runs[0]
    for k, out in runs[1:]:
        if out.fun < best.fun - 1e-8:
            best_k, best = k, out
        elif abs(out.fun - best.fun) <= 1e-8 and np.linalg.norm(out.grad) < np.linalg.norm(best.grad):
            best_k, best = k, out
    log.debug("multistart trace:\n%s", "\n".join(trace))
    return EstimationResult(
        params=best.x, stderr=None, loglik=-best.fun, converged=best.converged,
        iterations=best.iterations, layout=layout, gradient=-best.grad, message=best.message,
        start_index=best_k, failed_starts=len(starts) - len(runs), firm_ids=data.firm_ids,
        n_obs=data.n_obs, frontier=frontier, history=[-f for f in best.history],
    )


def estimate(data: TransformedPanel, config: EstimationConfig = EstimationConfig(),
             start: Optional[np.ndarray] = None) -> EstimationResult:
    """maximize + standard errors + recovered fixed effects."""
    result = maximize(data, config, start)
    se = standard_errors(data, result.params, config.frontier)
    result.stderr = se.stderr
    result.covariance = se.covariance
    result.information_pd = se.positive_definite
    result.condition_number = se.condition_number
    result.hessian_asymmetry = se.asymmetry
    result.fixed_effects = fixed_effects(data, result.params, config.frontier, config.fixed_effects)
    return result


def fit(data: PanelDataset, config: EstimationConfig = EstimationConfig()) -> EstimationResult:
    base = data.first_year if config.base_year is None else config.base_year
    result = estimate(prepare(data, base), config)
    result.base_year = base
    return result
