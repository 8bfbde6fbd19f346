"""Data-generating processes, Monte Carlo harness and quadrature oracles.

The oracles integrate the joint density of the demeaned residuals and the
half-normal firm draw numerically, with an explicit dense pseudo-inverse
of the singular demeaned covariance.  They share no algebra with
:mod:`sfapanel.likelihood` and exist to check it.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize, stats

from .errors import EstimationError, QuadratureError
from .panel import Category, FirmPanel, Observation, PanelDataset, TransformedPanel, VariableSchema
from .translog import DEFAULT_LAYOUT, design_matrix

log = logging.getLogger(__name__)

# Translog coefficients in layout order (K, L, F inputs).
DEFAULT_BETA = (
    0.30, 0.30, 0.40, 0.020,          # ln K, ln L, ln F, t
    0.050, -0.030, 0.040,             # ½ squares
    -0.020, 0.010, 0.020,             # cross products KL, KF, LF
    -0.002,                           # ½ t²
    0.005, -0.004, 0.003,             # t interactions
)


# ---------------------------------------------------------------------------
# Dense reference algebra
# ---------------------------------------------------------------------------

def demeaned_covariance(T: int, sigma_v: float) -> np.ndarray:
    """Pi = sigma_v^2 (I - J/T), built element by element."""
    return sigma_v ** 2 * (np.eye(T) - np.full((T, T), 1.0 / T))


def dense_pinv(T: int, sigma_v: float) -> np.ndarray:
    return np.linalg.pinv(demeaned_covariance(T, sigma_v), rcond=1e-12, hermitian=True)


def pseudo_log_det(matrix: np.ndarray, tol: float = 1e-10) -> tuple[float, int]:
    """Log pseudo-determinant and rank of a symmetric PSD matrix."""
    w = np.linalg.eigvalsh(matrix)
    keep = w > tol * max(1.0, float(np.max(np.abs(w))))
    return float(np.sum(np.log(w[keep]))), int(np.sum(keep))


# ---------------------------------------------------------------------------
# Quadrature oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Integrand:
    log_const: float
    pinv: np.ndarray
    eps: np.ndarray
    h_tilde: np.ndarray
    sign: float
    sigma_u: float

    def log_value(self, u: float) -> float:
        r = self.eps + self.sign * self.h_tilde * u
        return (self.log_const - 0.5 * float(r @ self.pinv @ r)
                + math.log(2.0) - 0.5 * math.log(2 * math.pi) - math.log(self.sigma_u)
                - 0.5 * (u / self.sigma_u) ** 2)


def _firm_pieces(data: TransformedPanel, theta, firm: int, frontier: str):
    theta = np.asarray(theta, dtype=float)
    p, K = data.x.shape[1], data.z.shape[1]
    beta, delta = theta[:p], theta[p:p + K]
    sigma_u, sigma_v = math.exp(theta[-2]), math.exp(theta[-1])
    rows = data.rows(firm)
    T = int(data.lengths[firm])
    eps = data.y_tilde[rows] - data.x_tilde[rows] @ beta
    h = np.exp(data.z[rows] @ delta) if K else np.ones(T)
    h_tilde = h - h.mean()
    cov = demeaned_covariance(T, sigma_v)
    pinv = dense_pinv(T, sigma_v)
    logdet, rank = pseudo_log_det(cov)
    log_const = -0.5 * rank * math.log(2 * math.pi) - 0.5 * logdet
    sign = 1.0 if frontier == "production" else -1.0
    return _Integrand(log_const, pinv, eps, h_tilde, sign, sigma_u), h


def _mode_and_width(f: _Integrand) -> tuple[float, float, float]:
    """Numerical maximiser of the log integrand on [0, inf) and a curvature width."""
    upper = f.sigma_u
    while f.log_value(2 * upper) > f.log_value(upper) and upper < 1e12:
        upper *= 2
    res = optimize.minimize_scalar(lambda u: -f.log_value(u), bounds=(0.0, 2 * upper),
                                   method="bounded", options={"xatol": 1e-12 * (1 + upper)})
    mode = float(res.x)
    if f.log_value(0.0) >= f.log_value(mode):
        mode = 0.0
    step = 1e-3 * f.sigma_u
    curv = (f.log_value(mode + 2 * step) - 2 * f.log_value(mode + step) + f.log_value(mode)) / step ** 2
    width = 1.0 / math.sqrt(-curv) if curv < 0 else f.sigma_u
    return mode, width, f.log_value(mode)


def _integrate(f: _Integrand, moment: int) -> tuple[float, float]:
    """Return (log of the peak, integral of u^moment * exp(g(u) - peak)) over [0, inf)."""
    mode, width, peak = _mode_and_width(f)
    fn = lambda u: (u ** moment) * math.exp(f.log_value(u) - peak)  # noqa: E731
    cuts = sorted({0.0, max(0.0, mode - 12 * width), mode, mode + 12 * width})
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b > a:
            val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=1e-11, limit=200)
            total += val
    val, err = integrate.quad(fn, cuts[-1], np.inf, epsabs=0.0, epsrel=1e-11, limit=200)
    total += val
    if not (total > 0 and math.isfinite(total)):
        raise QuadratureError("quadrature produced a non-positive or non-finite integral")
    return peak, total


def oracle_loglik(data: TransformedPanel, theta, firm: int = 0, frontier: str = "production") -> float:
    """log of the integral over u of the demeaned-residual density times the half-normal density."""
    if data.lengths[firm] > 6:
        raise ValueError("quadrature oracle is limited to panels with T_i <= 6")
    f, _ = _firm_pieces(data, theta, firm, frontier)
    peak, integral = _integrate(f, 0)
    return peak + math.log(integral)


def oracle_conditional_mean(data: TransformedPanel, theta, firm: int = 0,
                            frontier: str = "production") -> np.ndarray:
    """E(u_it | demeaned residuals) for each year of one firm, by quadrature."""
    if data.lengths[firm] > 6:
        raise ValueError("quadrature oracle is limited to panels with T_i <= 6")
    f, h = _firm_pieces(data, theta, firm, frontier)
    _, m0 = _integrate(f, 0)
    _, m1 = _integrate(f, 1)
    return h * (m1 / m0)


# ---------------------------------------------------------------------------
# Data-generating process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DgpSpec:
    """Simulation design.

    ``n_periods`` is either a fixed T or a (min, max) pair for an
    unbalanced panel; firms then start at random offsets inside a window
    of ``max`` years.  Determinants are a linear time trend (scaled by
    ``trend_scale``) followed by firm-year Bernoulli dummies.
    """

    n_firms: int = 100
    n_periods: Union[int, tuple[int, int]] = 10
    beta: tuple[float, ...] = DEFAULT_BETA
    delta: tuple[float, ...] = (0.15, 0.5)
    sigma_u: float = 0.4
    sigma_v: float = 0.2
    alpha_scale: float = 1.0
    input_corr: float = 0.5
    trend_scale: float = 1.0
    dummy_prob: float = 0.5
    base_year: int = 2000
    frontier: str = "production"
    categories: tuple[str, ...] = ()
    price_sd: float = 0.3
    seed: int = 1

    def __post_init__(self):
        if self.sigma_u < 0 or self.sigma_v < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.n_firms < 1:
            raise ValueError("n_firms must be positive")
        if len(self.beta) != DEFAULT_LAYOUT.size:
            raise ValueError(f"beta must have {DEFAULT_LAYOUT.size} entries")
        if len(self.delta) < 1:
            raise ValueError("at least one determinant coefficient is required")

    @property
    def determinant_names(self) -> tuple[str, ...]:
        return ("trend",) + tuple(f"dummy{k}" for k in range(1, len(self.delta)))

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta, self.delta,
                               [math.log(self.sigma_u) if self.sigma_u > 0 else -np.inf,
                                math.log(self.sigma_v) if self.sigma_v > 0 else -np.inf]])

    def as_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["delta"] = list(self.delta)
        d["categories"] = list(self.categories)
        if isinstance(self.n_periods, tuple):
            d["n_periods"] = list(self.n_periods)
        return d


@dataclass(frozen=True)
class SimulationTruth:
    alpha: np.ndarray      # (I,)
    u_star: np.ndarray     # (I,)
    u: np.ndarray          # (n,) firm-contiguous
    v: np.ndarray          # (n,)
    h: np.ndarray          # (n,)
    theta: np.ndarray


DGP_SCHEMA_INPUTS = {"K": "K", "L": "L", "F": "F"}


def dgp_schema(spec: DgpSpec) -> VariableSchema:
    return VariableSchema(
        output="output",
        inputs=dict(DGP_SCHEMA_INPUTS),
        determinants={d: d for d in spec.determinant_names},
        prices={n: f"w_{n}" for n in DGP_SCHEMA_INPUTS},
        firm="firm_id",
        year="year",
        category="category" if spec.categories else None,
    )


def generate_panel(spec: DgpSpec, rng: Optional[np.random.Generator] = None) -> PanelDataset:
    """Draw one panel; the hidden truth is attached as ``dataset.truth``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    I = spec.n_firms
    if isinstance(spec.n_periods, (tuple, list)):
        t_min, t_max = spec.n_periods
        lengths = rng.integers(t_min, t_max + 1, size=I)
        offsets = np.array([rng.integers(0, t_max - T + 1) for T in lengths])
    else:
        lengths = np.full(I, int(spec.n_periods))
        offsets = np.zeros(I, dtype=int)
    n = int(lengths.sum())
    firm_index = np.repeat(np.arange(I), lengths)
    t = np.concatenate([off + np.arange(T) for off, T in zip(offsets, lengths)]).astype(float)

    N = DEFAULT_LAYOUT.n_inputs
    corr = np.full((N, N), spec.input_corr)
    np.fill_diagonal(corr, 1.0)
    log_x = rng.multivariate_normal(np.zeros(N), corr, size=n)

    K = len(spec.delta)
    z = np.empty((n, K))
    z[:, 0] = spec.trend_scale * t
    if K > 1:
        z[:, 1:] = rng.binomial(1, spec.dummy_prob, size=(n, K - 1))

    alpha = spec.alpha_scale * rng.standard_normal(I)
    u_star = spec.sigma_u * np.abs(rng.standard_normal(I))
    v = spec.sigma_v * rng.standard_normal(n)
    h = np.exp(z @ np.asarray(spec.delta))
    u = h * u_star[firm_index]
    sign = 1.0 if spec.frontier == "production" else -1.0
    log_y = alpha[firm_index] + design_matrix(log_x, t) @ np.asarray(spec.beta) + v - sign * u
    prices = np.exp(spec.price_sd * rng.standard_normal((n, N)))

    schema = dgp_schema(spec)
    width = max(3, len(str(I)))
    names = DEFAULT_LAYOUT.inputs
    dets = spec.determinant_names
    firms = []
    start = 0
    for i in range(I):
        fid = f"F{i + 1:0{width}d}"
        cat = Category.parse(spec.categories[i % len(spec.categories)]) if spec.categories else None
        obs = []
        for r in range(start, start + int(lengths[i])):
            obs.append(Observation(
                firm_id=fid,
                year=spec.base_year + int(t[r]),
                output=float(np.exp(log_y[r])),
                inputs={nm: float(np.exp(log_x[r, k])) for k, nm in enumerate(names)},
                determinants={d: float(z[r, k]) for k, d in enumerate(dets)},
                prices={nm: float(prices[r, k]) for k, nm in enumerate(names)},
                category=cat,
            ))
        firms.append(FirmPanel(fid, tuple(obs)))
        start += int(lengths[i])
    truth = SimulationTruth(alpha, u_star, u, v, h, spec.theta)
    return PanelDataset(tuple(firms), schema, truth)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

@dataclass
class ParameterSummary:
    name: str
    truth: float
    mean: float
    bias: float
    mc_se: float
    rmse: float
    coverage: float
    n: int
    n_se: int


@dataclass
class McReport:
    spec: dict
    replications: int
    failures: int
    parameters: list[ParameterSummary] = field(default_factory=list)
    estimates: Optional[np.ndarray] = field(default=None, repr=False)

    def parameter(self, name: str) -> ParameterSummary:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "replications": self.replications,
            "failures": self.failures,
            "parameters": [asdict(p) for p in self.parameters],
        }

    def table(self) -> str:
        head = f"{'parameter':<16}{'truth':>10}{'mean':>10}{'bias':>10}{'mc_se':>10}{'rmse':>10}{'cover95':>9}"
        lines = [f"Monte Carlo: {self.replications} replications, {self.failures} failures", head,
                 "-" * len(head)]
        for p in self.parameters:
            lines.append(f"{p.name:<16}{p.truth:>10.4f}{p.mean:>10.4f}{p.bias:>10.4f}"
                         f"{p.mc_se:>10.4f}{p.rmse:>10.4f}{p.coverage:>9.3f}")
        return "\n".join(lines)


def replication_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per replication, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _one_replication(args):
    from .estimator import fit  # local import: estimator imports this module

    spec, index, config = args
    data = generate_panel(spec, replication_rng(spec.seed, index))
    try:
        result = fit(data, config)
    except (EstimationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.info("replication %d failed: %s", index, exc)
        return None
    if not result.converged:
        log.info("replication %d did not converge", index)
        return None
    se = result.stderr if result.stderr is not None else np.full(result.params.size, np.nan)
    return result.params, se


def run_monte_carlo(spec: DgpSpec, replications: int, config=None, n_jobs: int = 1) -> McReport:
    """generate -> estimate -> record, then bias / RMSE / 95% coverage per parameter."""
    from .estimator import EstimationConfig

    if replications < 2:
        raise ValueError("replications must be at least 2")
    config = config or EstimationConfig()
    tasks = [(spec, r, config) for r in range(replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_one_replication, tasks))
    else:
        outcomes = [_one_replication(t) for t in tasks]

    ok = [o for o in outcomes if o is not None]
    failures = replications - len(ok)
    if failures >= 0.1 * replications:
        raise EstimationError(f"{failures} of {replications} replications failed")
    est = np.array([o[0] for o in ok])
    se = np.array([o[1] for o in ok])
    truth = spec.theta
    z = stats.norm.ppf(0.975)
    from .likelihood import ParameterLayout

    names = ParameterLayout(DEFAULT_LAYOUT, spec.determinant_names).names
    summaries = []
    for j, name in enumerate(names):
        col = est[:, j]
        err = col - truth[j]
        has_se = np.isfinite(se[:, j])
        covered = np.abs(err[has_se]) <= z * se[has_se, j]
        summaries.append(ParameterSummary(
            name=name,
            truth=float(truth[j]),
            mean=float(col.mean()),
            bias=float(err.mean()),
            mc_se=float(col.std(ddof=1) / math.sqrt(len(col))),
            rmse=float(math.sqrt(np.mean(err ** 2))),
            coverage=float(covered.mean()) if has_se.any() else float("nan"),
            n=len(col),
            n_se=int(has_se.sum()),
        ))
    return McReport(spec.as_dict(), replications, failures, summaries, est)


def sample_skewness(x: Sequence[float]) -> float:
    return float(stats.skew(np.asarray(x, dtype=float)))
