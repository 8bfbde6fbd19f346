"""Unbalanced firm-year panels: data model, CSV ingestion, validation and
the within (firm-demeaning) transformation."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)


class Category(str, Enum):
    COAL = "Coal"
    GAS = "Gas"
    MIXED = "Mixed"
    TND = "TnD"
    INTEGRATED = "Integrated"

    @classmethod
    def parse(cls, value: str) -> "Category":
        key = value.strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        allowed = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown firm category {value!r} (expected one of {allowed})")


@dataclass(frozen=True)
class VariableSchema:
    """Binds logical variable names to CSV column names.

    ``inputs``, ``determinants`` and ``prices`` map a logical name to a
    column.  Prices are keyed by input name.  Order of the mappings is the
    order used everywhere downstream (design columns, parameter packing).
    """

    output: str = "output"
    inputs: Mapping[str, str] = field(default_factory=lambda: {"K": "K", "L": "L", "F": "F"})
    determinants: Mapping[str, str] = field(default_factory=dict)
    prices: Mapping[str, str] = field(default_factory=dict)
    firm: str = "firm_id"
    year: str = "year"
    category: Optional[str] = None

    def __post_init__(self):
        unknown = set(self.prices) - set(self.inputs)
        if unknown:
            raise SchemaError(f"prices bound for unknown inputs: {sorted(unknown)}")
        if not self.inputs:
            raise SchemaError("at least one input must be bound")

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(self.inputs)

    @property
    def determinant_names(self) -> tuple[str, ...]:
        return tuple(self.determinants)

    def required_columns(self) -> list[str]:
        cols = [self.firm, self.year, self.output, *self.inputs.values(),
                *self.determinants.values(), *self.prices.values()]
        if self.category:
            cols.append(self.category)
        return cols


@dataclass(frozen=True)
class Observation:
    firm_id: str
    year: int
    output: float
    inputs: Mapping[str, float]
    determinants: Mapping[str, float] = field(default_factory=dict)
    prices: Mapping[str, float] = field(default_factory=dict)
    category: Optional[Category] = None

    def __post_init__(self):
        if not self.output > 0:
            raise DataError(f"log of non-positive output for firm {self.firm_id!r}, year {self.year}")
        for name, value in self.inputs.items():
            if not value > 0:
                raise DataError(
                    f"log of non-positive input {name!r} for firm {self.firm_id!r}, year {self.year}")


@dataclass(frozen=True)
class FirmPanel:
    firm_id: str
    observations: tuple[Observation, ...]

    def __post_init__(self):
        years = [o.year for o in self.observations]
        if not years:
            raise DataError(f"firm {self.firm_id!r} has no observations")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise DataError(f"years of firm {self.firm_id!r} are not strictly increasing: {years}")

    @property
    def T(self) -> int:
        return len(self.observations)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(o.year for o in self.observations)

    @property
    def category(self) -> Optional[Category]:
        return self.observations[0].category


@dataclass(frozen=True)
class PanelArrays:
    """Flat, firm-contiguous numeric view of a dataset."""

    firm_ids: tuple[str, ...]
    firm_index: np.ndarray      # (n,) int, firm position for each row
    lengths: np.ndarray         # (I,) panel lengths T_i
    years: np.ndarray           # (n,) int
    log_output: np.ndarray      # (n,)
    log_inputs: np.ndarray      # (n, N)
    determinants: np.ndarray    # (n, K)
    prices: Optional[np.ndarray]  # (n, N) or None when no prices are bound
    output: np.ndarray          # (n,) levels, used for output weighting

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.lengths)[:-1])).astype(np.intp)


@dataclass(frozen=True)
class PanelDataset:
    firms: tuple[FirmPanel, ...]
    schema: VariableSchema
    truth: Optional[object] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.firms:
            raise DataError("dataset contains no firms")
        det_keys = set(self.schema.determinant_names)
        for firm in self.firms:
            for obs in firm.observations:
                if set(obs.determinants) != det_keys:
                    raise DataError(
                        f"determinants of firm {firm.firm_id!r}, year {obs.year} do not match schema")
                if set(obs.inputs) != set(self.schema.input_names):
                    raise DataError(
                        f"inputs of firm {firm.firm_id!r}, year {obs.year} do not match schema")

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def n_obs(self) -> int:
        return sum(f.T for f in self.firms)

    @property
    def first_year(self) -> int:
        return min(f.years[0] for f in self.firms)

    def firm(self, firm_id: str) -> FirmPanel:
        for f in self.firms:
            if f.firm_id == firm_id:
                return f
        raise KeyError(firm_id)

    def subset(self, firm_ids: Iterable[str]) -> "PanelDataset":
        keep = set(firm_ids)
        return PanelDataset(tuple(f for f in self.firms if f.firm_id in keep), self.schema, self.truth)

    def categories(self) -> list[Category]:
        seen = []
        for f in self.firms:
            if f.category is not None and f.category not in seen:
                seen.append(f.category)
        return sorted(seen, key=list(Category).index)

    @cached_property
    def arrays(self) -> PanelArrays:
        inputs = self.schema.input_names
        dets = self.schema.determinant_names
        rows = [o for f in self.firms for o in f.observations]
        lengths = np.array([f.T for f in self.firms], dtype=np.intp)
        prices = None
        if self.schema.prices and set(self.schema.prices) == set(inputs):
            prices = np.array([[o.prices[n] for n in inputs] for o in rows], dtype=float)
        output = np.array([o.output for o in rows], dtype=float)
        return PanelArrays(
            firm_ids=tuple(f.firm_id for f in self.firms),
            firm_index=np.repeat(np.arange(len(self.firms)), lengths),
            lengths=lengths,
            years=np.array([o.year for o in rows], dtype=int),
            log_output=np.log(output),
            log_inputs=np.log(np.array([[o.inputs[n] for n in inputs] for o in rows],
                                       dtype=float).reshape(len(rows), len(inputs))),
            determinants=np.array([[o.determinants[k] for k in dets] for o in rows],
                                  dtype=float).reshape(len(rows), len(dets)),
            prices=prices,
            output=output,
        )


def _parse_float(raw: str, column: str, row: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not numeric: {raw!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: column {column!r} is not finite")
    return value


def load_csv(path, schema: VariableSchema) -> PanelDataset:
    """Read a firm-year CSV into a :class:`PanelDataset`.

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        missing = [c for c in schema.required_columns() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")

        by_firm: dict[str, list[Observation]] = defaultdict(list)
        seen: dict[tuple[str, int], int] = {}
        for row_no, row in enumerate(reader, start=2):
            for col in schema.required_columns():
                if row.get(col) is None or str(row[col]).strip() == "":
                    raise DataError(f"row {row_no}: missing value for column {col!r}")
            firm_id = row[schema.firm].strip()
            try:
                year = int(row[schema.year].strip())
            except ValueError:
                raise DataError(f"row {row_no}: year is not an integer: {row[schema.year]!r}") from None
            key = (firm_id, year)
            if key in seen:
                raise DataError(f"row {row_no}: duplicate (firm, year) pair {key} first seen at row {seen[key]}")
            seen[key] = row_no

            output = _parse_float(row[schema.output], schema.output, row_no)
            if output <= 0:
                raise DataError(f"row {row_no}: log of non-positive output ({schema.output}={output})")
            inputs = {}
            for name, col in schema.inputs.items():
                value = _parse_float(row[col], col, row_no)
                if value <= 0:
                    raise DataError(f"row {row_no}: log of non-positive input {name} ({col}={value})")
                inputs[name] = value
            dets = {name: _parse_float(row[col], col, row_no) for name, col in schema.determinants.items()}
            prices = {}
            for name, col in schema.prices.items():
                value = _parse_float(row[col], col, row_no)
                if value <= 0:
                    raise DataError(f"row {row_no}: non-positive price for input {name} ({col}={value})")
                prices[name] = value
            category = None
            if schema.category:
                try:
                    category = Category.parse(row[schema.category])
                except ValueError as exc:
                    raise DataError(f"row {row_no}: {exc}") from None
            by_firm[firm_id].append(Observation(firm_id, year, output, inputs, dets, prices, category))

    if not by_firm:
        raise DataError(f"{path}: no data rows")
    firms = []
    for firm_id, obs in by_firm.items():
        obs.sort(key=lambda o: o.year)
        cats = {o.category for o in obs}
        if len(cats) > 1:
            raise DataError(f"firm {firm_id!r} changes category across years")
        firms.append(FirmPanel(firm_id, tuple(obs)))
    return PanelDataset(tuple(firms), schema)


@dataclass(frozen=True)
class ValidationReport:
    n_firms: int
    n_firm_years: int
    excluded: tuple[str, ...]
    n_estimation_firms: int
    n_estimation_firm_years: int
    by_category: Mapping[str, tuple[int, int]]   # category -> (firms, firm-years)
    by_year: Mapping[int, Mapping[str, int]]     # year -> category -> firms observed

    @property
    def estimation_firms(self) -> int:
        return self.n_estimation_firms

    def as_dict(self) -> dict:
        return {
            "firms": self.n_firms,
            "firm_years": self.n_firm_years,
            "excluded": list(self.excluded),
            "estimation_firms": self.n_estimation_firms,
            "estimation_firm_years": self.n_estimation_firm_years,
            "by_category": {k: {"firms": v[0], "firm_years": v[1]} for k, v in self.by_category.items()},
            "by_year": {str(y): dict(c) for y, c in self.by_year.items()},
        }


def _category_label(firm: FirmPanel) -> str:
    return firm.category.value if firm.category is not None else "All"


def validate_panel(data: PanelDataset) -> ValidationReport:
    """Tally the panel and list firms that demeaning would annihilate (T_i < 2).

    Raises :class:`DataError` when no firm survives the exclusion.
    """
    excluded = tuple(f.firm_id for f in data.firms if f.T < 2)
    for firm_id in excluded:
        log.warning("firm %s has a single observation and is excluded from estimation", firm_id)
    kept = [f for f in data.firms if f.T >= 2]
    if not kept:
        raise DataError("empty estimation set: every firm has fewer than two observations")

    cat_firms: Counter = Counter()
    cat_obs: Counter = Counter()
    by_year: dict[int, Counter] = defaultdict(Counter)
    for f in data.firms:
        label = _category_label(f)
        cat_firms[label] += 1
        cat_obs[label] += f.T
        for y in f.years:
            by_year[y][label] += 1
    order = [c.value for c in Category] + ["All"]
    by_category = {c: (cat_firms[c], cat_obs[c]) for c in order if cat_firms[c]}
    return ValidationReport(
        n_firms=data.n_firms,
        n_firm_years=data.n_obs,
        excluded=excluded,
        n_estimation_firms=len(kept),
        n_estimation_firm_years=sum(f.T for f in kept),
        by_category=by_category,
        by_year={y: {c: by_year[y][c] for c in order if by_year[y][c]} for y in sorted(by_year)},
    )


def estimation_set(data: PanelDataset) -> PanelDataset:
    """Drop firms with fewer than two observations."""
    return data.subset(f.firm_id for f in data.firms if f.T >= 2)


def group_means(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per-firm means of firm-contiguous rows."""
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1])).astype(np.intp)
    sums = np.add.reduceat(values, starts, axis=0)
    if values.ndim == 1:
        return sums / lengths
    return sums / lengths[:, None]


def demean(values: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract each firm's mean from its rows; return (demeaned, means)."""
    values = np.asarray(values, dtype=float)
    means = group_means(values, lengths)
    return values - np.repeat(means, lengths, axis=0), means


@dataclass(frozen=True)
class TransformedPanel:
    """Within-transformed panel; rows are firm-contiguous.

    ``z`` keeps the raw determinant values because the scaling function
    h = exp(z @ delta) has to be re-demeaned at every parameter value.
    """

    firm_ids: tuple[str, ...]
    lengths: np.ndarray
    y: np.ndarray
    y_tilde: np.ndarray
    y_mean: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    x_mean: np.ndarray
    z: np.ndarray
    h: Optional[np.ndarray] = None
    h_tilde: Optional[np.ndarray] = None
    h_mean: Optional[np.ndarray] = None
    design_names: tuple[str, ...] = ()
    determinant_names: tuple[str, ...] = ()
    years: Optional[np.ndarray] = None

    @property
    def n_firms(self) -> int:
        return len(self.lengths)

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @cached_property
    def firm_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.lengths)), self.lengths)

    @cached_property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.lengths)[:-1])).astype(np.intp)

    def rows(self, i: int) -> slice:
        s = int(self.starts[i])
        return slice(s, s + int(self.lengths[i]))

    def select(self, firms: Sequence[int]) -> "TransformedPanel":
        """Sub-panel with the given firm positions, in the given order."""
        idx = np.concatenate([np.arange(self.starts[i], self.starts[i] + self.lengths[i]) for i in firms])
        opt = lambda a, ix: None if a is None else a[ix]  # noqa: E731
        firms = list(firms)
        return TransformedPanel(
            firm_ids=tuple(self.firm_ids[i] for i in firms),
            lengths=self.lengths[firms],
            y=self.y[idx], y_tilde=self.y_tilde[idx], y_mean=self.y_mean[firms],
            x=self.x[idx], x_tilde=self.x_tilde[idx], x_mean=self.x_mean[firms],
            z=self.z[idx],
            h=opt(self.h, idx), h_tilde=opt(self.h_tilde, idx), h_mean=opt(self.h_mean, firms),
            design_names=self.design_names, determinant_names=self.determinant_names,
            years=opt(self.years, idx),
        )

    def with_output(self, y: np.ndarray) -> "TransformedPanel":
        """Same regressors, different (raw) log output."""
        y = np.asarray(y, dtype=float)
        y_tilde, y_mean = demean(y, self.lengths)
        return TransformedPanel(
            self.firm_ids, self.lengths, y, y_tilde, y_mean, self.x, self.x_tilde, self.x_mean,
            self.z, self.h, self.h_tilde, self.h_mean, self.design_names, self.determinant_names,
            self.years)


def within_transform(
    data: PanelDataset,
    design: np.ndarray,
    scaling: Optional[np.ndarray] = None,
    *,
    design_names: Sequence[str] = (),
) -> TransformedPanel:
    """Demean log output, design rows and (optionally) scaling values by firm.

    ``design`` and ``scaling`` must be aligned with the dataset's rows in
    firm order, years ascending.
    """
    arr = data.arrays
    n = len(arr.log_output)
    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[0] != n:
        raise ValueError(f"design has {design.shape[0] if design.ndim else 0} rows, dataset has {n} observations")
    y_tilde, y_mean = demean(arr.log_output, arr.lengths)
    x_tilde, x_mean = demean(design, arr.lengths)
    h = h_tilde = h_mean = None
    if scaling is not None:
        h = np.asarray(scaling, dtype=float)
        if h.shape != (n,):
            raise ValueError(f"scaling has shape {h.shape}, expected ({n},)")
        h_tilde, h_mean = demean(h, arr.lengths)
    return TransformedPanel(
        firm_ids=arr.firm_ids,
        lengths=arr.lengths.copy(),
        y=arr.log_output.copy(),
        y_tilde=y_tilde,
        y_mean=y_mean,
        x=design,
        x_tilde=x_tilde,
        x_mean=x_mean,
        z=arr.determinants.copy(),
        h=h,
        h_tilde=h_tilde,
        h_mean=h_mean,
        design_names=tuple(design_names),
        determinant_names=data.schema.determinant_names,
        years=arr.years.copy(),
    )


def write_csv(data: PanelDataset, path) -> None:
    """Write a dataset back out in the column layout its schema expects."""
    s = data.schema
    header = [s.firm, s.year, s.output, *s.inputs.values(), *s.determinants.values(), *s.prices.values()]
    if s.category:
        header.append(s.category)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for f in data.firms:
            for o in f.observations:
                row = [o.firm_id, o.year, repr(o.output), *(repr(o.inputs[n]) for n in s.inputs),
                       *(repr(o.determinants[n]) for n in s.determinants),
                       *(repr(o.prices[n]) for n in s.prices)]
                if s.category:
                    row.append(o.category.value if o.category is not None else "")
                writer.writerow(row)
