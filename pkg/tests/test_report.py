import csv
import io
import json
import math
from pathlib import Path

import pytest

from sfapanel import report
from sfapanel.panel import ValidationReport
from sfapanel.postestimation import FixedEffectRecord
from sfapanel.tfp import AggregateRow

from _golden_models import golden_models

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("p, expected", [
    (0.2, ""), (0.0999, "†"), (0.0499, "*"), (0.0099, "**"), (0.00099, "***"), (float("nan"), ""),
])
def test_star_thresholds(p, expected):
    assert report.stars(p) == expected


def test_coefficient_table_matches_golden_file():
    text = report.coefficient_table(golden_models())
    assert text == (GOLDEN / "coefficients.txt").read_text(encoding="utf-8")


def test_markdown_table_has_blocks_and_footer():
    md = report.coefficient_markdown(golden_models())
    lines = md.splitlines()
    assert lines[0] == "| Variable | Par. | Coal | Gas |"
    assert "| **Inefficiency** |  |  |  |" in lines
    assert "|  | ln(sigma_u) | -1.200*** | -0.500 |" in lines
    assert "| Log Likelihood |  | 72.676 | -5.250 |" in lines
    assert lines[-1] == report.STAR_LEGEND


def test_missing_standard_errors_are_marked():
    model = golden_models()["Gas"]
    model.stderr = None
    text = report.coefficient_table({"Gas": model})
    assert "(n/a)" in text and "***" not in text.split("Significance")[0]


def test_csv_quoting_and_tuple_expansion():
    recs = [FixedEffectRecord('firm, "x"', 1.5)]
    rows = list(csv.reader(io.StringIO(report.fixed_effects_csv(recs))))
    assert rows == [["firm_id", "alpha_hat"], ['firm, "x"', "1.5"]]


def test_aggregate_outputs():
    rows = [AggregateRow("Coal", "2000-01", "year", 2, 0, 0.1, 0.02, -0.01, 0.03, 0.06, 1.15),
            AggregateRow("Coal", "mean_2000-04", "period", 2, 1, 0.1, 0.02, -0.01, 0.03, 0.06, 1.15)]
    md = report.aggregate_markdown(rows)
    assert "| Year | TFP | ΔT | ΔTE | Ψ | Ω | Γ |" in md
    assert "| mean_2000-04 | 0.100 | 0.020 | -0.010 | 0.030 | 0.060 | 1.150 |" in md
    parsed = list(csv.DictReader(io.StringIO(report.aggregate_csv(rows))))
    assert parsed[1]["label"] == "mean_2000-04" and float(parsed[1]["Gamma"]) == 1.15


def test_validation_text_grid():
    rep = ValidationReport(5, 9, ("x",), 4, 8, {"Coal": (3, 5), "Gas": (2, 4)},
                           {2000: {"Coal": 3, "Gas": 2}, 2001: {"Coal": 2, "Gas": 2}})
    lines = report.validation_text(rep).splitlines()
    assert lines[0].split() == ["Year", "Coal", "Gas"]
    assert lines[1].split() == ["2000", "3", "2"]
    assert lines[3].split() == ["Firms=5", "3", "2"]
    assert lines[4].split() == ["Firm-Years=9", "5", "4"]
    assert "Excluded" in lines[5]
    assert len({len(line) for line in lines[:5]}) == 1


def test_json_is_deterministic_and_keeps_nan():
    text = report.dumps_json({"a": math.nan, "b": [1, 2]})
    assert text == report.dumps_json({"a": math.nan, "b": [1, 2]})
    assert json.loads(text)["b"] == [1, 2]
