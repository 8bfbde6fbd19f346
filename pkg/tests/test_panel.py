import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfapanel.errors import DataError, SchemaError
from sfapanel.panel import (Category, VariableSchema, demean, estimation_set, load_csv, validate_panel,
                            within_transform, write_csv)
from sfapanel.simulate import generate_panel

from _support import small_spec

HEADER = "firm_id,year,output,K,L,F,z1,category\n"
SCHEMA = VariableSchema(determinants={"z1": "z1"}, category="category")


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "panel.csv"
    p.write_text(header + body, encoding="utf-8")
    return p


def test_roundtrip_preserves_every_value(tmp_path):
    data = generate_panel(small_spec(n_firms=5, n_periods=(2, 5), categories=("Coal", "Gas")))
    path = tmp_path / "p.csv"
    write_csv(data, path)
    back = load_csv(path, data.schema)
    assert back.firms == data.firms


def test_rows_sorted_by_year_within_firm(tmp_path):
    p = write(tmp_path, "a,2002,1,1,1,1,0,Coal\na,2000,1,1,1,1,0,coal\na,2001,1,1,1,1,1,COAL\n")
    data = load_csv(p, SCHEMA)
    assert data.firms[0].years == (2000, 2001, 2002)
    assert data.firms[0].category is Category.COAL


def test_missing_column_is_named(tmp_path):
    p = write(tmp_path, "a,2000,1,1,1,0,Coal\n", header="firm_id,year,output,K,L,z1,category\n")
    with pytest.raises(SchemaError, match="F"):
        load_csv(p, SCHEMA)


@pytest.mark.parametrize("body, message", [
    ("a,2000,1,0,1,1,0,Coal\n", "non-positive input K"),
    ("a,2000,1,-2,1,1,0,Coal\n", "non-positive input K"),
    ("a,2000,0,1,1,1,0,Coal\n", "non-positive output"),
    ("a,2000,1,1,1,1,,Coal\n", "missing value"),
    ("a,2000,1,1,1,1,0,Coal\na,2000,1,1,1,1,0,Coal\n", "duplicate"),
    ("a,2000,1,1,1,1,0,Coal\na,2001,1,1,1,1,0,Gas\n", "changes category"),
    ("a,2000,1,1,1,1,0,Nuclear\n", "unknown firm category"),
    ("a,20x0,1,1,1,1,0,Coal\n", "year is not an integer"),
])
def test_bad_rows_raise_data_error(tmp_path, body, message):
    with pytest.raises(DataError, match=message):
        load_csv(write(tmp_path, body), SCHEMA)


def test_error_row_number_counts_header(tmp_path):
    with pytest.raises(DataError, match="row 3"):
        load_csv(write(tmp_path, "a,2000,1,1,1,1,0,Coal\na,2001,1,1,0,1,0,Coal\n"), SCHEMA)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty"):
        load_csv(p, SCHEMA)


def test_prices_for_unknown_input_rejected():
    with pytest.raises(SchemaError):
        VariableSchema(prices={"M": "w_M"})


def test_single_observation_firms_excluded_with_warning(tmp_path, caplog):
    p = write(tmp_path, "a,2000,1,1,1,1,0,Coal\nb,2000,1,1,1,1,0,Gas\nb,2001,1,2,1,1,1,Gas\n")
    data = load_csv(p, SCHEMA)
    rep = validate_panel(data)
    assert rep.excluded == ("a",)
    assert (rep.n_estimation_firms, rep.n_estimation_firm_years) == (1, 2)
    assert rep.by_category == {"Coal": (1, 1), "Gas": (1, 2)}
    assert rep.by_year == {2000: {"Coal": 1, "Gas": 1}, 2001: {"Gas": 1}}
    assert "single observation" in caplog.text
    assert [f.firm_id for f in estimation_set(data).firms] == ["b"]


def test_all_single_observation_is_an_error(tmp_path):
    data = load_csv(write(tmp_path, "a,2000,1,1,1,1,0,Coal\nb,2003,1,1,1,1,0,Gas\n"), SCHEMA)
    with pytest.raises(DataError, match="empty estimation set"):
        validate_panel(data)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=8), st.integers(0, 2**31))
def test_demean_has_zero_firm_sums_and_recovers_values(lengths, seed):
    lengths = np.array(lengths)
    v = np.random.default_rng(seed).normal(size=(lengths.sum(), 3)) * 10
    tilde, means = demean(v, lengths)
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    assert np.allclose(np.add.reduceat(tilde, starts), 0.0, atol=1e-12)
    assert np.allclose(tilde + np.repeat(means, lengths, axis=0), v, atol=1e-12)


def test_demean_singleton_panel_is_zero():
    tilde, means = demean(np.array([3.0, 1.0, 2.0]), np.array([1, 2]))
    assert tilde[0] == 0.0 and means[0] == 3.0


def test_within_transform_rejects_misaligned_design():
    data = generate_panel(small_spec(n_firms=3, n_periods=3))
    with pytest.raises(ValueError, match="rows"):
        within_transform(data, np.zeros((5, 2)))


def test_within_transform_demeans_scaling():
    data = generate_panel(small_spec(n_firms=4, n_periods=4))
    h = np.arange(16, dtype=float)
    tp = within_transform(data, np.ones((16, 1)), scaling=h)
    assert np.allclose(tp.h_tilde.reshape(4, 4), np.tile([-1.5, -0.5, 0.5, 1.5], (4, 1)))
    assert np.allclose(tp.x_tilde, 0.0)
