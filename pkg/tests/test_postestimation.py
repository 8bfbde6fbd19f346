import dataclasses
import math

import numpy as np
import pytest

from sfapanel.estimator import EstimationConfig, estimate, prepare
from sfapanel.panel import FirmPanel, Observation, PanelDataset, VariableSchema
from sfapanel.postestimation import (InefficiencyRecord, conditional_inefficiency, efficiency_trend,
                                     fixed_effects, inefficiency_index, recover_fixed_effects)
from sfapanel.simulate import DEFAULT_BETA, generate_panel, oracle_conditional_mean
from sfapanel.translog import design_matrix

from _support import random_draw, small_spec, transformed


def test_uninformative_data_give_half_normal_mean():
    tp = transformed(generate_panel(small_spec(n_firms=5, n_periods=4)))
    theta = small_spec().theta.copy()
    theta[14:16] = 0.0       # h = 1 everywhere, so h_tilde = 0
    u, u_star, h = conditional_inefficiency(tp, theta)
    assert np.allclose(u, math.exp(theta[-2]) * math.sqrt(2 / math.pi), rtol=1e-14)


@pytest.mark.parametrize("T", [2, 3])
def test_conditional_mean_matches_quadrature(T):
    rng = np.random.default_rng(40 + T)
    for _ in range(10):
        tp, theta = random_draw(rng, periods=(T,))
        assert np.allclose(conditional_inefficiency(tp, theta)[0], oracle_conditional_mean(tp, theta),
                           rtol=1e-6, atol=0)


def test_scaling_reparametrisation_leaves_u_hat_invariant():
    tp, theta = random_draw(np.random.default_rng(9), periods=(4,))
    c = 3.7
    wide = dataclasses.replace(tp, z=np.hstack([tp.z, np.ones((tp.n_obs, 1))]),
                               determinant_names=tp.determinant_names + ("const",))
    moved = np.concatenate([theta[:16], [math.log(c)], [theta[-2] - math.log(c), theta[-1]]])
    assert np.allclose(conditional_inefficiency(wide, moved)[0], conditional_inefficiency(tp, theta)[0],
                       rtol=1e-12)


def test_records_respect_invariants():
    rng = np.random.default_rng(12)
    for _ in range(20):
        tp, theta = random_draw(rng, periods=(2, 3, 4))
        for r in inefficiency_index(tp, theta):
            assert r.u_hat >= 0 and 0 < r.te_score <= 1
            assert r.te_score == pytest.approx(math.exp(-r.u_hat))
            assert r.u_hat == pytest.approx(r.h * r.u_star_hat)


def test_extreme_negative_mu1_stays_finite():
    tp, theta = random_draw(np.random.default_rng(1), periods=(3,))
    theta[-1] = -6.0     # tiny sigma_v makes mu1 / sigma1 very negative for one sign of eps
    u = conditional_inefficiency(tp, theta)[0]
    assert np.all(np.isfinite(u)) and np.all(u >= 0)


def test_fixed_effects_without_inefficiency_recover_alpha():
    data = generate_panel(small_spec(n_firms=100, n_periods=8, sigma_u=0.0, seed=5))
    tp = prepare(data)
    res = estimate(tp, EstimationConfig(multistart=2))
    err = res.fixed_effects - data.truth.alpha
    ols_se = 0.2 / math.sqrt(8)
    assert abs(err.mean()) < 4 * ols_se and err.std() < 2 * ols_se


def test_level_residuals_have_zero_firm_means(sim_fit):
    tp, res = sim_fit
    u = conditional_inefficiency(tp, res.params)[0]
    resid = tp.y - np.repeat(res.fixed_effects, tp.lengths) - tp.x @ res.params[:14] + u
    assert np.max(np.abs(np.add.reduceat(resid, tp.starts))) < 1e-10


def test_fixed_effect_difference_of_shifted_twin_firms():
    base = generate_panel(small_spec(n_firms=30, n_periods=5, seed=2))
    twin = base.firms[0]
    shifted = FirmPanel("twin", tuple(dataclasses.replace(o, firm_id="twin", output=o.output * math.e)
                                      for o in twin.observations))
    data = PanelDataset(base.firms + (shifted,), base.schema)
    tp = prepare(data)
    alpha = fixed_effects(tp, small_spec().theta)
    assert alpha[-1] - alpha[0] == pytest.approx(1.0, abs=1e-12)


def test_literal_and_corrected_variants():
    tp, theta = random_draw(np.random.default_rng(4), periods=(5,))
    lit = fixed_effects(tp, theta, variant="literal")
    cor = fixed_effects(tp, theta, variant="corrected")
    assert np.all(np.isfinite(lit)) and np.all(np.isfinite(cor))
    with pytest.raises(ValueError):
        fixed_effects(tp, theta, variant="other")
    recs = recover_fixed_effects(tp, theta)
    assert [r.firm_id for r in recs] == list(tp.firm_ids) and recs[0].alpha_hat == cor[0]


def _rec(fid, year, te):
    return InefficiencyRecord(fid, year, -math.log(te), te, 1.0, -math.log(te))


def test_trend_single_firm_equals_its_series():
    recs = [_rec("a", 2000 + k, te) for k, te in enumerate([0.9, 0.8, 0.85])]
    rows = efficiency_trend(recs)
    assert [(r.group, r.year, r.mean_te) for r in rows] == [
        ("All", 2000, pytest.approx(0.9)), ("All", 2001, pytest.approx(0.8)), ("All", 2002, pytest.approx(0.85))]


def test_trend_groups_and_flat_line():
    recs = [_rec(f, y, 1.0) for f in ("a", "b", "c") for y in (2000, 2001)]
    rows = efficiency_trend(recs, {"a": "Coal", "b": "Gas", "c": "Gas"})
    assert {r.group for r in rows} == {"Coal", "Gas", "All"}
    assert all(r.mean_te == 1.0 for r in rows)
    assert [r.n_firms for r in rows if r.group == "All"] == [3, 3]


def test_trend_turning_point_of_quadratic_scaling():
    # z = (t, t^2) with delta_t > 0 > delta_tt: inefficiency peaks, efficiency bottoms, at -d_t / (2 d_tt)
    rng = np.random.default_rng(77)
    d_t, d_tt = 0.4, -0.04
    I, T = 150, 10
    t = np.tile(np.arange(T, dtype=float), I)
    lx = rng.normal(size=(I * T, 3))
    u = np.exp(d_t * t + d_tt * t ** 2) * np.repeat(0.3 * np.abs(rng.normal(size=I)), T)
    y = np.repeat(rng.normal(size=I), T) + design_matrix(lx, t) @ np.array(DEFAULT_BETA) \
        + 0.1 * rng.normal(size=I * T) - u
    schema = VariableSchema(determinants={"t": "t", "t2": "t2"})
    firms = tuple(FirmPanel(f"F{i}", tuple(
        Observation(f"F{i}", 2000 + k, math.exp(y[i * T + k]), dict(zip("KLF", np.exp(lx[i * T + k]))),
                    {"t": float(k), "t2": float(k * k)}) for k in range(T))) for i in range(I))
    tp = prepare(PanelDataset(firms, schema))
    res = estimate(tp, EstimationConfig(multistart=2))
    dh = res.named()
    vertex = -dh["delta_t"] / (2 * dh["delta_t2"])
    assert abs(vertex - 5.0) < 0.5
    rows = efficiency_trend(inefficiency_index(tp, res.params))
    low = min(rows, key=lambda r: r.mean_te)
    assert low.year - 2000 == round(vertex)
