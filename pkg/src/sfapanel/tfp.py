"""Divisia TFP change and its decomposition into technical change,
efficiency change, scale effect and price effect.

For each consecutive pair of observed years of a firm::

    TFP = dT + dTE + Psi + Omega
    Psi   = (Gamma - 1) * sum_n (gamma_n / Gamma) * xdot_n
    Omega = sum_n (gamma_n / Gamma - S_n) * xdot_n

Growth rates are log differences divided by the year gap.  Elasticities,
returns to scale and technical change are evaluated at the midpoint of
the pair (mean log inputs, mean time offset); expenditure shares are the
mean of the two years' shares.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .likelihood import ParameterLayout
from .panel import FirmPanel, PanelDataset
from .postestimation import InefficiencyRecord
from .translog import elasticities, technical_change

DTE_VARIANTS = ("corrected", "literal")
COMPONENTS = ("tfp_dot", "delta_T", "delta_TE", "scale_effect", "price_effect", "Gamma")


@dataclass(frozen=True)
class Growth:
    year_from: np.ndarray
    year_to: np.ndarray
    y_dot: np.ndarray     # (P,)
    x_dot: np.ndarray     # (P, N)

    @property
    def gap(self) -> np.ndarray:
        return (self.year_to - self.year_from).astype(float)


def growth_rates(firm: FirmPanel, inputs: Optional[Sequence[str]] = None) -> Growth:
    """Log growth of output and inputs over consecutive observed years."""
    if firm.T < 2:
        raise DataError(f"firm {firm.firm_id!r} needs at least two observations for growth rates")
    obs = firm.observations
    inputs = tuple(inputs) if inputs is not None else tuple(obs[0].inputs)
    years = np.array(firm.years)
    ly = np.log([o.output for o in obs])
    lx = np.log([[o.inputs[n] for n in inputs] for o in obs])
    gap = np.diff(years).astype(float)
    return Growth(years[:-1], years[1:], np.diff(ly) / gap, np.diff(lx, axis=0) / gap[:, None])


def expenditure_shares(quantities, prices) -> np.ndarray:
    """S_n = w_n x_n / sum_m w_m x_m along the last axis."""
    x = np.asarray(quantities, dtype=float)
    w = np.asarray(prices, dtype=float)
    if x.shape != w.shape:
        raise DataError("quantities and prices must have the same shape")
    if np.any(~np.isfinite(w)):
        raise DataError("missing price for an input used by the model")
    if np.any(w < 0):
        raise DataError("negative factor price")
    spend = w * x
    total = spend.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DataError("total expenditure must be positive")
    return spend / total


@dataclass(frozen=True)
class TfpRecord:
    firm_id: str
    category: str
    year_from: int
    year_to: int
    tfp_dot: float
    delta_T: float
    delta_TE: float
    scale_effect: float
    price_effect: float
    Gamma: float
    gamma: tuple[float, ...]
    shares: tuple[float, ...]
    x_dot: tuple[float, ...]
    y_dot: float
    divisia_tfp: float        # y_dot - sum S_n xdot_n, computed from the data alone
    weight: float             # output level in year_to
    flagged: bool = False     # Gamma == 0, Psi and Omega undefined

    @property
    def closure(self) -> float:
        return self.tfp_dot - (self.delta_T + self.delta_TE + self.scale_effect + self.price_effect)


def _firm_prices(firm: FirmPanel, inputs: Sequence[str]) -> np.ndarray:
    rows = []
    for o in firm.observations:
        missing = [n for n in inputs if n not in o.prices]
        if missing:
            raise DataError(f"missing price column for input(s) {missing} (firm {firm.firm_id!r})")
        rows.append([o.prices[n] for n in inputs])
    return np.array(rows, dtype=float)


def decompose_tfp(
    theta,
    layout: ParameterLayout,
    firm: FirmPanel,
    inefficiency: Union[Sequence[InefficiencyRecord], float],
    *,
    base_year: int,
    technical_change_variant: str = "time_only",
    dte: str = "corrected",
) -> list[TfpRecord]:
    """Decompose TFP change of one firm over each consecutive pair of years.

    ``inefficiency`` is either the firm's inefficiency records or a known
    firm-level draw u_i (simulation truth).  ``dte="corrected"`` uses
    -u_i * (h_t - h_t-1) / gap; ``dte="literal"`` uses u_it in place of u_i.
    """
    if dte not in DTE_VARIANTS:
        raise ValueError(f"dte must be one of {DTE_VARIANTS}")
    prm = layout.unpack(theta)
    tl = layout.translog
    inputs = tl.inputs
    obs = firm.observations
    growth = growth_rates(firm, inputs)

    years = np.array(firm.years)
    t = (years - base_year).astype(float)
    lx = np.log([[o.inputs[n] for n in inputs] for o in obs])
    z = np.array([[o.determinants[d] for d in layout.determinants] for o in obs]).reshape(len(obs), -1)
    h = np.exp(z @ prm.delta) if layout.n_delta else np.ones(len(obs))

    if isinstance(inefficiency, (int, float)):
        u_star = float(inefficiency)
        u_hat = h * u_star
    else:
        by_year = {r.year: r for r in inefficiency if r.firm_id == firm.firm_id}
        try:
            u_hat = np.array([by_year[y].u_hat for y in firm.years])
        except KeyError as exc:
            raise DataError(f"no inefficiency record for firm {firm.firm_id!r}, year {exc}") from None
        u_star = by_year[firm.years[0]].u_star_hat

    w = _firm_prices(firm, inputs)
    x_levels = np.exp(lx)
    S_year = expenditure_shares(x_levels, w)
    S = 0.5 * (S_year[:-1] + S_year[1:])

    t_mid = 0.5 * (t[:-1] + t[1:])
    lx_mid = 0.5 * (lx[:-1] + lx[1:])
    gamma = elasticities(prm.beta, lx_mid, t_mid, tl)
    Gamma = gamma.sum(axis=1)
    dT = technical_change(prm.beta, t_mid, lx_mid, technical_change_variant, tl)
    dh = np.diff(h) / growth.gap
    dTE = -(u_star * dh if dte == "corrected" else u_hat[1:] * dh)

    category = firm.category.value if firm.category is not None else "All"
    records = []
    for k in range(len(growth.y_dot)):
        xd = growth.x_dot[k]
        G = float(Gamma[k])
        divisia = float(growth.y_dot[k] - S[k] @ xd)
        if abs(G) < 1e-12:
            psi = omega = tfp = float("nan")
            flagged = True
        else:
            norm = gamma[k] / G
            psi = 0.0 if abs(G - 1.0) < 1e-12 else float((G - 1.0) * (norm @ xd))
            omega = float((norm - S[k]) @ xd)
            tfp = float(dT[k]) + float(dTE[k]) + psi + omega
            flagged = False
        records.append(TfpRecord(
            firm_id=firm.firm_id, category=category,
            year_from=int(growth.year_from[k]), year_to=int(growth.year_to[k]),
            tfp_dot=tfp, delta_T=float(dT[k]), delta_TE=float(dTE[k]),
            scale_effect=psi, price_effect=omega, Gamma=G,
            gamma=tuple(map(float, gamma[k])), shares=tuple(map(float, S[k])),
            x_dot=tuple(map(float, xd)), y_dot=float(growth.y_dot[k]),
            divisia_tfp=divisia, weight=float(obs[k + 1].output), flagged=flagged,
        ))
    return records


def decompose_dataset(theta, layout: ParameterLayout, data: PanelDataset,
                      inefficiency: Sequence[InefficiencyRecord], *, base_year: int,
                      technical_change_variant: str = "time_only", dte: str = "corrected") -> list[TfpRecord]:
    by_firm: dict[str, list[InefficiencyRecord]] = defaultdict(list)
    for r in inefficiency:
        by_firm[r.firm_id].append(r)
    out = []
    for firm in data.firms:
        if firm.T < 2 or firm.firm_id not in by_firm:
            continue
        out.extend(decompose_tfp(theta, layout, firm, by_firm[firm.firm_id], base_year=base_year,
                                 technical_change_variant=technical_change_variant, dte=dte))
    return out


@dataclass(frozen=True)
class AggregateRow:
    group: str
    label: str
    kind: str             # "year" or "period"
    n: int
    excluded: int
    tfp_dot: float
    delta_T: float
    delta_TE: float
    scale_effect: float
    price_effect: float
    Gamma: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COMPONENTS)


def pair_label(year_from: int, year_to: int) -> str:
    return f"{year_from}-{year_to % 100:02d}"


def period_labels(first: int, boundary: int, last: int) -> tuple[str, str]:
    return f"mean_{first}-{boundary % 100:02d}", f"mean_{boundary}-{last % 100:02d}"


def _mean_row(group: str, label: str, kind: str, recs: list[TfpRecord], excluded: int,
              weighted: bool) -> AggregateRow:
    w = np.array([r.weight for r in recs]) if weighted else np.ones(len(recs))
    w = w / w.sum()
    vals = [float(w @ np.array([getattr(r, c) for r in recs])) for c in COMPONENTS]
    return AggregateRow(group, label, kind, len(recs), excluded, *vals)


def aggregate(records: Iterable[TfpRecord], boundary: int = 2004, weights: str = "unweighted",
              groups: bool = True) -> list[AggregateRow]:
    """Per-year-pair and sub-period means of every component, by category and overall.

    A pair (t-1, t) belongs to the first period when t <= ``boundary``.
    Flagged records (Gamma == 0) are left out and counted in ``excluded``.
    Groups with no usable record produce no rows.
    """
    if weights not in ("unweighted", "output"):
        raise ValueError("weights must be 'unweighted' or 'output'")
    records = list(records)
    if not records:
        return []
    first = min(r.year_from for r in records)
    last = max(r.year_to for r in records)
    early, late = period_labels(first, boundary, last)
    weighted = weights == "output"

    grouped: dict[str, list[TfpRecord]] = defaultdict(list)
    order: list[str] = []
    for r in records:
        if groups and r.category != "All":
            if r.category not in order:
                order.append(r.category)
            grouped[r.category].append(r)
        grouped["All"].append(r)
    order.append("All")

    rows: list[AggregateRow] = []
    for g in order:
        recs = grouped[g]
        by_pair: dict[tuple[int, int], list[TfpRecord]] = defaultdict(list)
        for r in recs:
            by_pair[(r.year_from, r.year_to)].append(r)
        for pair in sorted(by_pair):
            ok = [r for r in by_pair[pair] if not r.flagged]
            if ok:
                rows.append(_mean_row(g, pair_label(*pair), "year", ok,
                                      len(by_pair[pair]) - len(ok), weighted))
        for label, keep in ((early, lambda r: r.year_to <= boundary), (late, lambda r: r.year_to > boundary)):
            sel = [r for r in recs if keep(r)]
            ok = [r for r in sel if not r.flagged]
            if ok:
                rows.append(_mean_row(g, label, "period", ok, len(sel) - len(ok), weighted))
    return rows


def records_by_group(rows: Sequence[AggregateRow]) -> Mapping[str, list[AggregateRow]]:
    out: dict[str, list[AggregateRow]] = defaultdict(list)
    for r in rows:
        out[r.group].append(r)
    return out
