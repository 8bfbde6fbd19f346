"""Command-line front end.

Usage::

    sfapanel validate  --config run.yaml
    sfapanel estimate  --config run.yaml [--pooled] [--frontier cost] [--fe paper]
    sfapanel decompose --config run.yaml [--dte paper] [--tc full]
    sfapanel simulate  --config run.yaml --seed 7

The configuration is a YAML file; command-line flags override it.
Exit status: 0 success, 1 usage/config error, 2 data error, 3 convergence
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import report
from .errors import ConfigError, DataError, EstimationError, SchemaError, SfaPanelError
from .estimator import EstimationConfig, EstimationResult, estimate, prepare
from .panel import PanelDataset, VariableSchema, load_csv, validate_panel
from .postestimation import efficiency_trend, inefficiency_index, recover_fixed_effects
from .simulate import DgpSpec, run_monte_carlo
from .tfp import aggregate, decompose_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3

# command-line spelling -> internal variant name
TC_ALIASES = {"eq12": "time_only", "time_only": "time_only", "full": "full"}
VARIANT_ALIASES = {"paper": "literal", "literal": "literal", "corrected": "corrected"}
FORMATS = ("csv", "json", "md")
ESTIMATES_FILE = "estimates.json"


@dataclass(frozen=True)
class RunConfig:
    data: Optional[Path] = None
    out: Path = Path("sfapanel_out")
    schema: VariableSchema = VariableSchema()
    base_year: Optional[int] = None
    frontier: str = "production"
    technical_change: str = "time_only"
    dte: str = "corrected"
    fixed_effects: str = "corrected"
    pooled: bool = False
    boundary: int = 2004
    weights: str = "unweighted"
    formats: tuple[str, ...] = FORMATS
    estimation: EstimationConfig = EstimationConfig()
    simulation: dict = field(default_factory=dict)
    seed: int = 0


def _alias(value, table: dict, key: str) -> str:
    try:
        return table[str(value)]
    except KeyError:
        raise ConfigError(f"{key}: {value!r} is not one of {sorted(set(table))}") from None


def _mapping(value, key: str) -> dict:
    if value is None:
        return {}
    if isinstance(value, list):
        return {str(v): str(v) for v in value}
    if isinstance(value, dict):
        return {str(k): str(v) for k, v in value.items()}
    raise ConfigError(f"{key}: expected a mapping or a list of column names")


SCHEMA_KEYS = {"output", "inputs", "determinants", "prices", "firm", "year", "category"}
TOP_KEYS = {"data", "out", "schema", "base_year", "frontier", "technical_change", "dte",
            "fixed_effects", "pooled", "boundary", "weights", "formats", "estimation",
            "simulation", "seed"}
ESTIMATION_KEYS = {"max_iterations", "gtol", "xtol", "multistart"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(map(str, unknown))}")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config {path} is not valid YAML{where}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be a mapping")
    return raw


def build_config(raw: dict, args: argparse.Namespace) -> RunConfig:
    """Merge the config file with command-line flags (flags win)."""
    raw = dict(raw)
    _check_keys(raw, TOP_KEYS, "config")
    for flag, key in (("data", "data"), ("out", "out"), ("seed", "seed"), ("frontier", "frontier"),
                      ("dte", "dte"), ("fe", "fixed_effects"), ("tc", "technical_change"),
                      ("boundary", "boundary")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "pooled", False):
        raw["pooled"] = True

    schema_raw = raw.get("schema") or {}
    if not isinstance(schema_raw, dict):
        raise ConfigError("schema: expected a mapping")
    _check_keys(schema_raw, SCHEMA_KEYS, "schema")
    pooled = bool(raw.get("pooled", False))
    try:
        schema = VariableSchema(
            output=str(schema_raw.get("output", "output")),
            inputs=_mapping(schema_raw.get("inputs", ["K", "L", "F"]), "schema.inputs"),
            determinants=_mapping(schema_raw.get("determinants"), "schema.determinants"),
            prices=_mapping(schema_raw.get("prices"), "schema.prices"),
            firm=str(schema_raw.get("firm", "firm_id")),
            year=str(schema_raw.get("year", "year")),
            # pooled runs ignore the category binding entirely
            category=None if pooled else schema_raw.get("category"),
        )
    except SchemaError as exc:
        raise ConfigError(f"schema: {exc}") from None

    est_raw = raw.get("estimation") or {}
    if not isinstance(est_raw, dict):
        raise ConfigError("estimation: expected a mapping")
    _check_keys(est_raw, ESTIMATION_KEYS, "estimation")

    def number(key, kind, value):
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None

    seed = number("seed", int, raw.get("seed", 0))
    base_year = raw.get("base_year")
    frontier = str(raw.get("frontier", "production"))
    if frontier not in ("production", "cost"):
        raise ConfigError(f"frontier: {frontier!r} is not one of ['cost', 'production']")
    fe = _alias(raw.get("fixed_effects", "corrected"), VARIANT_ALIASES, "fixed_effects")
    try:
        estimation = EstimationConfig(
            max_iterations=number("estimation.max_iterations", int, est_raw.get("max_iterations", 500)),
            gtol=number("estimation.gtol", float, est_raw.get("gtol", 1e-6)),
            xtol=number("estimation.xtol", float, est_raw.get("xtol", 1e-9)),
            multistart=number("estimation.multistart", int, est_raw.get("multistart", 3)),
            seed=seed, frontier=frontier, fixed_effects=fe,
            base_year=None if base_year is None else number("base_year", int, base_year),
        )
    except ValueError as exc:
        raise ConfigError(f"estimation: {exc}") from None

    formats = raw.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [formats]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"formats: unsupported {bad} (allowed {list(FORMATS)})")
    weights = str(raw.get("weights", "unweighted"))
    if weights not in ("unweighted", "output"):
        raise ConfigError(f"weights: {weights!r} is not one of ['output', 'unweighted']")
    simulation = raw.get("simulation") or {}
    if not isinstance(simulation, dict):
        raise ConfigError("simulation: expected a mapping")

    return RunConfig(
        data=Path(raw["data"]) if raw.get("data") else None,
        out=Path(raw.get("out", "sfapanel_out")),
        schema=schema,
        base_year=estimation.base_year,
        frontier=frontier,
        technical_change=_alias(raw.get("technical_change", "time_only"), TC_ALIASES, "technical_change"),
        dte=_alias(raw.get("dte", "corrected"), VARIANT_ALIASES, "dte"),
        fixed_effects=fe,
        pooled=pooled,
        boundary=number("boundary", int, raw.get("boundary", 2004)),
        weights=weights,
        formats=tuple(formats),
        estimation=estimation,
        simulation=dict(simulation),
        seed=seed,
    )


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="")


def _load_data(cfg: RunConfig) -> PanelDataset:
    if cfg.data is None:
        raise ConfigError("data: no data file given (use --data or the 'data' field)")
    if not cfg.data.is_file():
        raise DataError(f"cannot read data file {cfg.data}")
    return load_csv(cfg.data, cfg.schema)


def _groups(cfg: RunConfig, data: PanelDataset) -> dict[str, PanelDataset]:
    """One dataset per category when a category column is bound, else one pooled set."""
    if cfg.pooled or not cfg.schema.category:
        return {"All": data}
    return {c.value: data.subset(f.firm_id for f in data.firms if f.category is c)
            for c in data.categories()}


def cmd_validate(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    rep = validate_panel(data)
    text = report.validation_text(rep)
    sys.stdout.write(text)
    if "json" in cfg.formats:
        _write(cfg.out, "validation.json", report.validation_json(rep))
    _write(cfg.out, "validation.txt", text)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    validate_panel(data)
    base = cfg.base_year if cfg.base_year is not None else data.first_year
    config = dataclasses.replace(cfg.estimation, base_year=base)

    results: dict[str, EstimationResult] = {}
    failures: dict[str, str] = {}
    inefficiency = []
    fixed = []
    grouping = {}
    for group, subset in _groups(cfg, data).items():
        try:
            tp = prepare(subset, base)
            result = estimate(tp, config)
        except (EstimationError, DataError) as exc:
            failures[group] = str(exc)
            continue
        result.base_year = base
        if not result.converged:
            failures[group] = f"not converged: {result.message}"
        results[group] = result
        inefficiency.extend(inefficiency_index(tp, result.params, cfg.frontier))
        fixed.extend(recover_fixed_effects(tp, result.params, cfg.frontier, cfg.fixed_effects))
        for fid in tp.firm_ids:
            grouping[fid] = group

    payload = {
        "base_year": base,
        "frontier": cfg.frontier,
        "fixed_effects_variant": cfg.fixed_effects,
        "pooled": cfg.pooled or not cfg.schema.category,
        "models": {g: r.to_dict() for g, r in results.items()},
        "failures": failures,
    }
    _write(cfg.out, ESTIMATES_FILE, report.dumps_json(payload))
    converged = {g: r for g, r in results.items() if g not in failures}
    for group, msg in failures.items():
        sys.stderr.write(f"{group}: {msg}\n")
    if not converged:
        sys.stderr.write("estimation failed for every group\n")
        return EXIT_CONVERGENCE

    text = report.coefficient_table(converged)
    sys.stdout.write(text)
    _write(cfg.out, "estimates.txt", text)
    if "md" in cfg.formats:
        _write(cfg.out, "estimates.md", report.coefficient_markdown(converged))
    if "csv" in cfg.formats:
        _write(cfg.out, "inefficiency.csv", report.inefficiency_csv(inefficiency))
        _write(cfg.out, "fixed_effects.csv", report.fixed_effects_csv(fixed))
        trend_groups = {f: g for f, g in grouping.items() if g != "All"}
        _write(cfg.out, "efficiency_trend.csv", report.trend_csv(efficiency_trend(inefficiency, trend_groups)))
    return EXIT_OK


def _read_estimates(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError:
        raise ConfigError(f"cannot read estimates file {path}; run 'estimate' first") from None
    except json.JSONDecodeError:
        raise ConfigError(f"estimates file {path} is not valid JSON") from None


def cmd_decompose(cfg: RunConfig, estimates_path: Optional[str] = None) -> int:
    data = _load_data(cfg)
    path = Path(estimates_path) if estimates_path else cfg.out / ESTIMATES_FILE
    saved = _read_estimates(path)
    models = saved.get("models") or {}
    if not models:
        raise ConfigError(f"{path}: no estimated models")
    if not cfg.schema.prices:
        raise ConfigError("schema.prices: factor prices are required for the decomposition")
    base = saved["base_year"]
    frontier = saved.get("frontier", cfg.frontier)
    pooled = bool(saved.get("pooled", False))
    groups = {"All": data} if pooled else _groups(cfg, data)

    records = []
    for group, model in models.items():
        if group not in groups:
            raise SchemaError(f"estimates contain group {group!r} which is absent from the data")
        result = EstimationResult.from_dict(model)
        if tuple(result.layout.translog.inputs) != tuple(cfg.schema.input_names):
            raise SchemaError(f"{group}: estimated inputs {list(result.layout.translog.inputs)} "
                              f"do not match the data schema {list(cfg.schema.input_names)}")
        tp = prepare(groups[group], base, result.layout.determinants)
        ineff = inefficiency_index(tp, result.params, frontier)
        records.extend(decompose_dataset(result.params, result.layout, groups[group], ineff,
                                         base_year=base, technical_change_variant=cfg.technical_change,
                                         dte=cfg.dte))
    rows = aggregate(records, boundary=cfg.boundary, weights=cfg.weights, groups=not pooled)
    if "csv" in cfg.formats:
        _write(cfg.out, "tfp_records.csv", report.tfp_records_csv(records, cfg.schema.input_names))
        _write(cfg.out, "tfp_aggregate.csv", report.aggregate_csv(rows))
    md = report.aggregate_markdown(rows)
    if "md" in cfg.formats:
        _write(cfg.out, "tfp_aggregate.md", md)
    sys.stdout.write(md)
    flagged = sum(r.flagged for r in records)
    if flagged:
        sys.stderr.write(f"{flagged} record(s) with zero returns to scale excluded from means\n")
    return EXIT_OK


DGP_FIELDS = {f.name for f in dataclasses.fields(DgpSpec)}


def simulation_spec(cfg: RunConfig) -> tuple[DgpSpec, int, int]:
    sim = dict(cfg.simulation)
    replications = sim.pop("replications", 200)
    n_jobs = sim.pop("n_jobs", 1)
    _check_keys(sim, DGP_FIELDS, "simulation")
    if isinstance(replications, bool) or not isinstance(replications, int) or replications < 2:
        raise ConfigError(f"simulation.replications: must be an integer >= 2, got {replications!r}")
    if not isinstance(n_jobs, int) or n_jobs < 1:
        raise ConfigError(f"simulation.n_jobs: must be a positive integer, got {n_jobs!r}")
    for key in ("n_periods", "beta", "delta", "categories"):
        if isinstance(sim.get(key), list):
            sim[key] = tuple(sim[key])
    sim["seed"] = cfg.seed
    sim.setdefault("frontier", cfg.frontier)
    try:
        return DgpSpec(**sim), replications, n_jobs
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulation: {exc}") from None


def cmd_simulate(cfg: RunConfig) -> int:
    spec, replications, n_jobs = simulation_spec(cfg)
    config = dataclasses.replace(cfg.estimation, frontier=spec.frontier, base_year=spec.base_year)
    rep = run_monte_carlo(spec, replications, config, n_jobs=n_jobs)
    table = rep.table() + "\n"
    sys.stdout.write(table)
    _write(cfg.out, "mc_report.json", report.mc_json(rep))
    _write(cfg.out, "mc_report.txt", table)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--data", metavar="PATH", help="firm-year CSV file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="master random seed")
    common.add_argument("--pooled", action="store_true", help="one model for all firms")
    common.add_argument("--frontier", choices=("production", "cost"))
    common.add_argument("--dte", choices=("paper", "corrected"), help="efficiency-change formula")
    common.add_argument("--fe", choices=("paper", "corrected"), help="fixed-effect formula")
    common.add_argument("--tc", choices=("eq12", "full"), help="technical-change definition")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="sfapanel", description="Fixed-effects stochastic frontier estimation "
                     "and TFP decomposition for firm-year panels.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check the panel and print firm tallies")
    sub.add_parser("estimate", parents=[common], help="fit the frontier per category or pooled")
    dec = sub.add_parser("decompose", parents=[common], help="decompose TFP change from saved estimates")
    dec.add_argument("--estimates", metavar="PATH", help=f"default: OUT/{ESTIMATES_FILE}")
    dec.add_argument("--boundary", type=int, metavar="YEAR", help="last year-to of the first sub-period")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo parameter recovery study")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(load_config(args.config), args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        if args.command == "decompose":
            return cmd_decompose(cfg, args.estimates)
        return cmd_simulate(cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except (DataError, SchemaError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except EstimationError as exc:
        sys.stderr.write(f"convergence error: {exc}\n")
        return EXIT_CONVERGENCE
    except SfaPanelError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
