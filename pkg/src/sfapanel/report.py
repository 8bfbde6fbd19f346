"""Plain-text, Markdown, CSV and JSON renderers for estimation and
decomposition output.

Coefficient table layout (one column per model)::

    Variable      Par.        Coal          Gas
    ln(K)         beta_K      0.412***      ...
                              (0.055)
    ...
    Exogenous explanatory variables
    ...
    Inefficiency
                  ln(sigma_u) ...
                  ln(sigma_v) ...
    Log Likelihood            72.676
    Standard errors (in parenthesis) computed using delta method.
    Significance denoted by †: p<0.1, *: p<0.05, **: p<0.01, ***: p<0.001

A parameter absent from a model (e.g. a determinant dropped as constant)
renders as ``--``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, fields
from typing import Mapping, Optional, Sequence

from .estimator import EstimationResult, p_value
from .panel import ValidationReport
from .postestimation import FixedEffectRecord, InefficiencyRecord, TrendRow
from .tfp import COMPONENTS, AggregateRow, TfpRecord, records_by_group

SE_NOTE = "Standard errors (in parenthesis) computed using delta method."
STAR_LEGEND = "Significance denoted by †: p<0.1, *: p<0.05, **: p<0.01, ***: p<0.001"
MISSING = "--"


def stars(p: float) -> str:
    if p is None or not math.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "†"
    return ""


def _variable_label(name: str, inputs: Sequence[str]) -> str:
    if name in ("ln_sigma_u", "ln_sigma_v"):
        return ""
    if name.startswith("delta_"):
        return name[len("delta_"):]
    body = name[len("beta_"):]
    if body == "t":
        return "Time"
    if body == "tt":
        return "1/2 Time^2"
    if body in inputs:
        return f"ln({body})"
    if body.endswith("t") and body[:-1] in inputs:
        return f"ln({body[:-1]}) Time"
    for a in inputs:
        for b in inputs:
            if body == a + b:
                return f"1/2 ln({a})^2" if a == b else f"ln({a})ln({b})"
    return body


def _par_label(name: str) -> str:
    if name == "ln_sigma_u":
        return "ln(sigma_u)"
    if name == "ln_sigma_v":
        return "ln(sigma_v)"
    return name


def _cells(result: Optional[EstimationResult], name: str) -> tuple[str, str]:
    if result is None or name not in result.names:
        return MISSING, MISSING
    est = float(result.params[result.names.index(name)])
    if result.stderr is None:
        return f"{est:.3f}", "(n/a)"
    se = result.se_of(name)
    return f"{est:.3f}{stars(p_value(est, se))}", f"({se:.3f})"


def coefficient_rows(results: Mapping[str, EstimationResult]) -> list[list[str]]:
    """Rows of the coefficient table as lists of cell strings."""
    models = list(results)
    first = next(iter(results.values()))
    inputs = first.layout.translog.inputs
    betas = list(first.layout.translog.coefficient_names)
    deltas: list[str] = []
    for r in results.values():
        for d in r.layout.determinants:
            if f"delta_{d}" not in deltas:
                deltas.append(f"delta_{d}")
    header = ["Variable", "Par."] + models
    rows: list[list[str]] = [header]

    def block(names):
        for name in names:
            est, se = zip(*(_cells(results[m], name) for m in models))
            rows.append([_variable_label(name, inputs), _par_label(name), *est])
            rows.append(["", "", *se])

    block(betas)
    rows.append(["Exogenous explanatory variables"])
    block(deltas)
    rows.append(["Inefficiency"])
    block(["ln_sigma_u", "ln_sigma_v"])
    rows.append(["Log Likelihood", ""] + [f"{results[m].loglik:.3f}" for m in models])
    return rows


def coefficient_table(results: Mapping[str, EstimationResult]) -> str:
    """Aligned plain-text coefficient table with standard errors and stars."""
    rows = coefficient_rows(results)
    ncol = len(rows[0])
    widths = [max(len(r[c]) for r in rows if len(r) == ncol) for c in range(ncol)]
    rule = "-" * (sum(widths) + 2 * (ncol - 1))
    out = [rule]
    for r in rows:
        if len(r) == 1:
            out += [rule, r[0], rule]
            continue
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        out.append("  ".join(cells).rstrip())
        if r is rows[0]:
            out.append(rule)
    out += [rule, SE_NOTE, STAR_LEGEND]
    return "\n".join(out) + "\n"


def coefficient_markdown(results: Mapping[str, EstimationResult]) -> str:
    rows = coefficient_rows(results)
    ncol = len(rows[0])
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * ncol]
    for r in rows[1:]:
        if len(r) == 1:
            r = [f"**{r[0]}**"] + [""] * (ncol - 1)
        lines.append("| " + " | ".join(r) + " |")
    lines += ["", SE_NOTE, "", STAR_LEGEND]
    return "\n".join(lines) + "\n"


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def dataclass_csv(records: Sequence, exclude: Sequence[str] = ()) -> str:
    """CSV of flat dataclass records; tuple fields are expanded positionally."""
    if not records:
        return ""
    names = [f.name for f in fields(records[0]) if f.name not in exclude]
    header: list[str] = []
    for n in names:
        v = getattr(records[0], n)
        header += [f"{n}_{k}" for k in range(len(v))] if isinstance(v, tuple) else [n]
    rows = []
    for r in records:
        row: list[str] = []
        for n in names:
            v = getattr(r, n)
            row += [_fmt(x) for x in v] if isinstance(v, tuple) else [_fmt(v)]
        rows.append(row)
    return _csv(header, rows)


def tfp_records_csv(records: Sequence[TfpRecord], inputs: Sequence[str]) -> str:
    header = ["firm_id", "category", "year_from", "year_to", *COMPONENTS, "y_dot", "divisia_tfp",
              *(f"gamma_{n}" for n in inputs), *(f"share_{n}" for n in inputs),
              *(f"x_dot_{n}" for n in inputs), "flagged"]
    rows = []
    for r in records:
        rows.append([r.firm_id, r.category, r.year_from, r.year_to,
                     *(_fmt(getattr(r, c)) for c in COMPONENTS), _fmt(r.y_dot), _fmt(r.divisia_tfp),
                     *map(_fmt, r.gamma), *map(_fmt, r.shares), *map(_fmt, r.x_dot), int(r.flagged)])
    return _csv(header, rows)


def aggregate_csv(rows: Sequence[AggregateRow]) -> str:
    return _csv(["group", "label", "kind", "n", "excluded", *COMPONENTS],
                [[r.group, r.label, r.kind, r.n, r.excluded, *(_fmt(v) for v in r.values())] for r in rows])


TFP_HEADERS = ("TFP", "ΔT", "ΔTE", "Ψ", "Ω", "Γ")


def aggregate_markdown(rows: Sequence[AggregateRow]) -> str:
    """One block per group with year-pair rows then sub-period means."""
    out = []
    for group, grows in records_by_group(rows).items():
        out.append(f"### {group}\n")
        out.append("| Year | " + " | ".join(TFP_HEADERS) + " |")
        out.append("|---|" + "---:|" * len(TFP_HEADERS))
        for r in grows:
            out.append(f"| {r.label} | " + " | ".join(f"{v:.3f}" for v in r.values()) + " |")
        excluded = sum(r.excluded for r in grows if r.kind == "year")
        if excluded:
            out.append(f"\n{excluded} record(s) with zero returns to scale excluded.")
        out.append("")
    out.append("Mean year-on-year changes. ΔT: technology change, ΔTE: technical efficiency change, "
               "Ψ: scale effect, Ω: price effect, Γ: returns to scale.")
    return "\n".join(out) + "\n"


def inefficiency_csv(records: Sequence[InefficiencyRecord]) -> str:
    return dataclass_csv(records)


def fixed_effects_csv(records: Sequence[FixedEffectRecord]) -> str:
    return dataclass_csv(records)


def trend_csv(rows: Sequence[TrendRow]) -> str:
    return dataclass_csv(rows)


def validation_text(report: ValidationReport) -> str:
    """Firm counts per year and category, with totals."""
    cats = list(report.by_category)
    totals = (("Firms", 0, report.n_firms), ("Firm-Years", 1, report.n_firm_years))
    label_w = max(len(f"{name}={n}") for name, _, n in totals) + 2
    width = max([8] + [len(c) + 2 for c in cats])
    lines = ["Year".ljust(label_w) + "".join(c.rjust(width) for c in cats)]
    for year, counts in report.by_year.items():
        lines.append(str(year).ljust(label_w) + "".join(str(counts.get(c, 0)).rjust(width) for c in cats))
    for name, k, n in totals:
        lines.append(f"{name}={n}".ljust(label_w) + "".join(
            str(report.by_category[c][k]).rjust(width) for c in cats))
    if report.excluded:
        lines.append(f"Excluded (single observation): {', '.join(report.excluded)}")
    lines.append(f"Estimation set: {report.n_estimation_firms} firms, "
                 f"{report.n_estimation_firm_years} firm-years")
    return "\n".join(lines) + "\n"


def validation_json(report: ValidationReport) -> str:
    return dumps_json(report.as_dict())


def mc_json(report) -> str:
    return dumps_json(report.to_dict())


def asdict_list(records) -> list[dict]:
    return [asdict(r) for r in records]
