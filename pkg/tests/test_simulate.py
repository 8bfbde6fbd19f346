import json
import math

import numpy as np
import pytest

from sfapanel.errors import EstimationError
from sfapanel.estimator import EstimationConfig, prepare
from sfapanel.simulate import (DgpSpec, McReport, generate_panel, oracle_loglik, replication_rng,
                               run_monte_carlo, sample_skewness)

from _support import small_spec

FAST = EstimationConfig(multistart=1)


def test_generated_panel_matches_spec_and_truth():
    spec = small_spec(n_firms=12, n_periods=(2, 6), categories=("Coal", "Gas", "TnD"))
    data = generate_panel(spec)
    t = data.truth
    assert data.n_firms == 12 and all(2 <= f.T <= 6 for f in data.firms)
    assert np.allclose(t.u, t.h * np.repeat(t.u_star, data.arrays.lengths))
    assert np.all(t.u_star >= 0)
    assert [c.value for c in data.categories()] == ["Coal", "Gas", "TnD"]
    assert set(data.firms[0].observations[0].prices) == {"K", "L", "F"}


def test_generation_is_reproducible():
    a, b = generate_panel(small_spec()), generate_panel(small_spec())
    assert a.firms == b.firms
    assert generate_panel(small_spec(seed=4)).firms != a.firms


def test_replication_streams_differ_by_index():
    x = replication_rng(1, 0).standard_normal(5)
    assert np.array_equal(x, replication_rng(1, 0).standard_normal(5))
    assert not np.array_equal(x, replication_rng(1, 1).standard_normal(5))


def test_spec_validation():
    with pytest.raises(ValueError):
        DgpSpec(sigma_u=-1.0)
    with pytest.raises(ValueError):
        DgpSpec(beta=(1.0, 2.0))


def test_within_residual_skewness_sign_follows_frontier():
    # level residuals v - s*u skew away from the frontier
    for frontier, sign in (("production", -1), ("cost", 1)):
        spec = small_spec(n_firms=400, n_periods=4, sigma_u=1.0, sigma_v=0.05, delta=(0.0, 1.0),
                          frontier=frontier, seed=13)
        data = generate_panel(spec)
        arr = data.arrays
        from sfapanel.translog import design_matrix
        level = arr.log_output - design_matrix(arr.log_inputs, arr.years - 2000) @ np.array(spec.beta) \
            - np.repeat(data.truth.alpha, arr.lengths)
        assert np.sign(sample_skewness(level)) == sign


def test_oracle_refuses_long_panels():
    tp = prepare(generate_panel(small_spec(n_firms=2, n_periods=7)))
    with pytest.raises(ValueError):
        oracle_loglik(tp, small_spec().theta)


def test_monte_carlo_needs_two_replications():
    with pytest.raises(ValueError):
        run_monte_carlo(small_spec(), 0)
    with pytest.raises(ValueError):
        run_monte_carlo(small_spec(), 1)


def test_small_monte_carlo_report_and_parallel_equivalence():
    spec = small_spec(n_firms=40, n_periods=6, seed=3)
    serial = run_monte_carlo(spec, 4, FAST)
    parallel = run_monte_carlo(spec, 4, FAST, n_jobs=2)
    assert np.array_equal(serial.estimates, parallel.estimates)
    assert json.dumps(serial.to_dict()) == json.dumps(parallel.to_dict())
    assert serial.replications == 4 and serial.failures == 0
    p = serial.parameter("beta_K")
    assert p.truth == 0.30 and 0.0 <= p.coverage <= 1.0 and p.rmse >= abs(p.bias)
    assert p.mean - p.truth == pytest.approx(p.bias)
    assert "beta_K" in serial.table()
    with pytest.raises(KeyError):
        serial.parameter("nope")


def test_too_many_failures_is_an_error(monkeypatch):
    import sfapanel.simulate as sim

    monkeypatch.setattr(sim, "_one_replication", lambda args: None)
    with pytest.raises(EstimationError, match="failed"):
        run_monte_carlo(small_spec(), 3)


def test_report_serialises_to_plain_json():
    rep = McReport({"n_firms": 1}, 2, 0)
    assert json.loads(json.dumps(rep.to_dict())) == {"spec": {"n_firms": 1}, "replications": 2,
                                                     "failures": 0, "parameters": []}


def test_zero_sigma_u_truth_has_no_inefficiency():
    data = generate_panel(small_spec(sigma_u=0.0, n_firms=3))
    assert np.all(data.truth.u == 0.0) and math.isinf(small_spec(sigma_u=0.0).theta[-2])
