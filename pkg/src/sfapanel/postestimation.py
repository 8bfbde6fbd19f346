"""Conditional inefficiency, technical efficiency scores and recovery of the
firm fixed effects after estimation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .likelihood import frontier_sign, mills_ratio, panel_terms, split_params
from .panel import TransformedPanel

FIXED_EFFECT_VARIANTS = ("corrected", "literal")


@dataclass(frozen=True)
class InefficiencyRecord:
    firm_id: str
    year: int
    u_hat: float        # E(u_it | demeaned residuals)
    te_score: float     # exp(-u_hat)
    h: float
    u_star_hat: float   # firm-level E(u_i | .) = u_hat / h


@dataclass(frozen=True)
class FixedEffectRecord:
    firm_id: str
    alpha_hat: float


def conditional_inefficiency(data: TransformedPanel, theta, frontier: str = "production"):
    """Vectorised E(u_it | eps_tilde_i).

    Returns ``(u_hat, u_star_hat, h)`` with ``u_hat`` and ``h`` per row and
    ``u_star_hat`` per firm.  Uses the same posterior moments as the
    likelihood, so the sign convention cannot drift between the two.
    """
    terms = panel_terms(data, theta, frontier)
    ratio = terms.mu1 / terms.sigma1
    u_star = terms.mu1 + terms.sigma1 * mills_ratio(ratio)
    # mu1 + sigma1*lambda is positive analytically; guard the rounding floor
    u_star = np.maximum(u_star, 0.0)
    u_hat = terms.h * np.repeat(u_star, data.lengths)
    return u_hat, u_star, terms.h


def inefficiency_index(data: TransformedPanel, theta, frontier: str = "production") -> list[InefficiencyRecord]:
    u_hat, u_star, h = conditional_inefficiency(data, theta, frontier)
    years = data.years if data.years is not None else np.zeros(data.n_obs, dtype=int)
    fidx = data.firm_index
    return [
        InefficiencyRecord(
            firm_id=data.firm_ids[fidx[r]],
            year=int(years[r]),
            u_hat=float(u_hat[r]),
            te_score=float(math.exp(-u_hat[r])),
            h=float(h[r]),
            u_star_hat=float(u_star[fidx[r]]),
        )
        for r in range(data.n_obs)
    ]


def fixed_effects(data: TransformedPanel, theta, frontier: str = "production",
                  variant: str = "corrected") -> np.ndarray:
    """alpha_i = ybar_i - xbar_i beta + s * hbar_i * E(u_i | .), one per firm.

    ``corrected`` takes E(u_i | .) from the same posterior as the
    likelihood (location mu1, scale sigma1, demeaned h), so the firm mean
    of y - alpha - x beta + s * u_hat is zero.  ``literal`` follows the
    printed recovery formula: raw h in the precision and sigma_v raised to
    the power 2T_i.
    """
    if variant not in FIXED_EFFECT_VARIANTS:
        raise ValueError(f"fixed-effect variant must be one of {FIXED_EFFECT_VARIANTS}")
    theta = np.asarray(theta, dtype=float)
    sign = frontier_sign(frontier)
    terms = panel_terms(data, theta, frontier)
    prm = split_params(theta, data.x.shape[1])
    starts = data.starts
    h_bar = np.add.reduceat(terms.h, starts) / data.lengths
    if variant == "corrected":
        mu, sigma = terms.mu1, terms.sigma1
    else:
        # sum eps_tilde * h == sum eps_tilde * h_tilde since eps_tilde sums to zero
        s_eh = np.add.reduceat(terms.eps_tilde * terms.h, starts)
        s_hh = np.add.reduceat(terms.h * terms.h, starts)
        a = np.exp(-2.0 * data.lengths * prm.ln_sigma_v)
        precision = a * s_hh + math.exp(-2.0 * prm.ln_sigma_u)
        mu = -sign * a * s_eh / precision
        sigma = 1.0 / np.sqrt(precision)
    e_u = mu + sigma * mills_ratio(mu / sigma)
    return data.y_mean - data.x_mean @ prm.beta + sign * h_bar * e_u


def recover_fixed_effects(data: TransformedPanel, theta, frontier: str = "production",
                          variant: str = "corrected") -> list[FixedEffectRecord]:
    alpha = fixed_effects(data, theta, frontier, variant)
    return [FixedEffectRecord(fid, float(a)) for fid, a in zip(data.firm_ids, alpha)]


@dataclass(frozen=True)
class TrendRow:
    group: str
    year: int
    mean_te: float
    n_firms: int


def efficiency_trend(records: Sequence[InefficiencyRecord],
                     grouping: Optional[Mapping[str, str]] = None) -> list[TrendRow]:
    """Arithmetic mean of te_score by (group, year).

    ``grouping`` maps firm id to a group label; firms missing from it (or
    no mapping at all) fall in ``"All"``.  Every firm also contributes to
    the ``"All"`` rows.
    """
    grouping = grouping or {}
    cells: dict[tuple[str, int], list[float]] = defaultdict(list)
    labels = []
    for r in records:
        g = grouping.get(r.firm_id, "All")
        if g not in labels:
            labels.append(g)
        cells[(g, r.year)].append(r.te_score)
        if g != "All":
            cells[("All", r.year)].append(r.te_score)
    if "All" not in labels:
        labels.append("All")
    rows = []
    for g in labels:
        for (grp, year) in sorted(k for k in cells if k[0] == g):
            vals = cells[(grp, year)]
            if vals:
                rows.append(TrendRow(grp, year, float(np.mean(vals)), len(vals)))
    return rows
