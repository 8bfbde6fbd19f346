import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfapanel.errors import LikelihoodEvaluationError
from sfapanel.likelihood import (ParameterLayout, cross_form, fd_gradient, fd_hessian, firm_logliks,
                                 loglik_gradient, loglik_hessian, mills_ratio, mu1_sigma1, panel_loglik,
                                 panel_terms, quadratic_form, scaling_values, total_loglik)
from sfapanel.simulate import (dense_pinv, demeaned_covariance, generate_panel, oracle_conditional_mean,
                               oracle_loglik)

from _support import random_draw, small_spec, transformed


@pytest.mark.parametrize("T", range(2, 7))
@pytest.mark.parametrize("sigma_v", [0.05, 1.0, 3.7])
def test_pseudo_inverse_identities(T, sigma_v):
    Pi = demeaned_covariance(T, sigma_v)
    P = dense_pinv(T, sigma_v)
    closed = (np.eye(T) - 1.0 / T) / sigma_v ** 2
    assert np.allclose(P, closed, rtol=0, atol=1e-10 * np.abs(closed).max())
    assert np.allclose(Pi @ P @ Pi, Pi, rtol=0, atol=1e-10 * np.abs(Pi).max())
    assert np.allclose(P @ Pi @ P, P, rtol=0, atol=1e-10 * np.abs(P).max())
    assert np.allclose(Pi @ P, (Pi @ P).T, atol=1e-12)
    assert np.linalg.matrix_rank(Pi) == T - 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.floats(0.1, 5.0), st.integers(0, 2**31))
def test_closed_form_quadratic_forms_match_dense(T, sigma_v, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=T), rng.normal(size=T)
    e = a - a.mean()
    P = dense_pinv(T, sigma_v)
    assert math.isclose(quadratic_form(e, sigma_v), e @ P @ e, rel_tol=1e-10, abs_tol=1e-12)
    assert math.isclose(cross_form(a, b, sigma_v), a @ P @ b, rel_tol=1e-9, abs_tol=1e-10)


def test_quadratic_form_requires_demeaned_vector():
    with pytest.raises(ValueError, match="demeaned"):
        quadratic_form(np.array([1.0, 2.0]), 1.0)


def test_mu1_sigma1_matches_vectorised_terms():
    tp, theta = random_draw(np.random.default_rng(11), periods=(3,))
    terms = panel_terms(tp, theta)
    mu1, s1 = mu1_sigma1(terms.eps_tilde, terms.h_tilde, math.exp(theta[-2]), math.exp(theta[-1]))
    assert math.isclose(mu1, terms.mu1[0], rel_tol=1e-12)
    assert math.isclose(s1, terms.sigma1[0], rel_tol=1e-12)


@pytest.mark.parametrize("frontier", ["production", "cost"])
def test_closed_form_matches_quadrature(frontier):
    rng = np.random.default_rng(5)
    for _ in range(20):
        tp, theta = random_draw(rng, periods=(2, 3, 4, 5), frontier=frontier)
        ll = panel_loglik(tp, theta, frontier=frontier)
        assert abs(ll - oracle_loglik(tp, theta, frontier=frontier)) <= 1e-6 * abs(ll)


def test_sign_convention_matters():
    # the wrong frontier sign gives a different likelihood on the same data
    tp, theta = random_draw(np.random.default_rng(8), periods=(4,))
    assert abs(panel_loglik(tp, theta, frontier="production")
               - oracle_loglik(tp, theta, frontier="cost")) > 1e-6


def test_total_is_sum_of_firm_contributions():
    tp = transformed(generate_panel(small_spec(n_periods=(2, 6))))
    theta = small_spec().theta
    per_firm = firm_logliks(tp, theta)
    assert math.isclose(total_loglik(tp, theta), math.fsum(per_firm), rel_tol=1e-15)
    assert math.isclose(panel_loglik(tp, theta, firm=7), per_firm[7], rel_tol=1e-12)


def test_fixed_effects_do_not_enter_the_likelihood():
    tp = transformed(generate_panel(small_spec()))
    theta = small_spec().theta
    shift = np.random.default_rng(1).normal(scale=50, size=tp.n_firms)
    moved = tp.with_output(tp.y + np.repeat(shift, tp.lengths))
    assert math.isclose(total_loglik(tp, theta), total_loglik(moved, theta), rel_tol=1e-10)


def test_scaling_overflow_is_refused():
    with pytest.raises(LikelihoodEvaluationError):
        scaling_values(np.array([800.0]), np.array([[1.0]]))
    tp, theta = random_draw(np.random.default_rng(2))
    theta[14] = 1e4
    with pytest.raises(FloatingPointError):
        total_loglik(tp, theta)


def test_mills_ratio_is_stable_in_the_left_tail():
    x = np.array([-40.0, -10.0, 0.0, 5.0])
    r = mills_ratio(x)
    assert np.all(np.isfinite(r))
    assert r[0] == pytest.approx(40.0, rel=1e-3)
    assert r[2] == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)


def test_parameter_layout_pack_unpack():
    lay = ParameterLayout(determinants=("a", "b"))
    theta = lay.pack(np.arange(14.0), [7.0, 8.0], -1.0, -2.0)
    prm = lay.unpack(theta)
    assert lay.size == 18 and lay.names[-4:] == ("delta_a", "delta_b", "ln_sigma_u", "ln_sigma_v")
    assert prm.delta.tolist() == [7.0, 8.0] and prm.sigma_v == math.exp(-2.0)
    with pytest.raises(ValueError):
        lay.unpack(theta[:-1])


def test_quadrature_conditional_mean_cost_frontier():
    from sfapanel.postestimation import conditional_inefficiency
    tp, theta = random_draw(np.random.default_rng(3), periods=(3,), frontier="cost")
    u = conditional_inefficiency(tp, theta, "cost")[0]
    assert np.allclose(u, oracle_conditional_mean(tp, theta, frontier="cost"), rtol=1e-6, atol=0)


# gradient machinery -------------------------------------------------------

def quadratic_surrogate(rng, n=6, scale=1.0):
    M = rng.normal(size=(n, n))
    A = scale * (M @ M.T / n + np.eye(n))
    a = rng.normal(size=n)
    return A, a, (lambda th: -0.5 * (th - a) @ A @ (th - a))


def test_fd_gradient_exact_on_unit_scale_quadratic():
    rng = np.random.default_rng(2024)
    A, a, f = quadratic_surrogate(rng)
    for _ in range(20):
        theta = a + rng.normal(size=a.size)
        assert np.max(np.abs(fd_gradient(f, theta) + A @ (theta - a))) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
def test_fd_gradient_error_is_rounding_only(seed, scale):
    # no truncation error on a quadratic: what remains scales with |f| / step
    rng = np.random.default_rng(seed)
    A, a, f = quadratic_surrogate(rng, scale=scale)
    theta = a + rng.normal(size=a.size)
    err = np.max(np.abs(fd_gradient(f, theta) + A @ (theta - a)))
    assert err <= 1e-8 * max(1.0, abs(f(theta)))
    H = fd_hessian(lambda th: -A @ (th - a), theta)
    assert np.allclose(H, -A, rtol=0, atol=1e-8 * scale)


def test_gradient_at_truth_is_small_relative_to_curvature():
    spec = small_spec(n_firms=300, n_periods=8, seed=21)
    tp = transformed(generate_panel(spec))
    g = loglik_gradient(tp, spec.theta)
    H = loglik_hessian(tp, spec.theta)
    score = float(g @ np.linalg.solve(-0.5 * (H + H.T), g))
    # score statistic is chi-square with 18 degrees of freedom under the truth
    assert score < 60.0


def test_moving_beta_away_from_truth_lowers_the_likelihood():
    spec = small_spec(n_firms=300, n_periods=8, seed=22)
    tp = transformed(generate_panel(spec))
    base = total_loglik(tp, spec.theta)
    rng = np.random.default_rng(0)
    for scale in (0.05, 0.1, 0.3):
        theta = spec.theta.copy()
        theta[:14] += scale * rng.standard_normal(14)
        assert total_loglik(tp, theta) < base
