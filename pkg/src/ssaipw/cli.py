"""Command-line entry point: ``ssaipw fit | simulate | diagnose | generate``.

Reports are JSON documents written to ``--out`` (or stdout). Floats carry 17
significant digits and NaN is written as null. Any library error produces a
report with an ``error`` section and exit status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .basis import BasisSpec, KnotPlacement
from .diagnostics import ks_two_sample_bootstrap, mmd_permutation_test
from .errors import ConfigurationError, DataError, ParseError, SSAIPWError
from .model import Dataset, Estimand, Link, TargetSpec
from .pipeline import FitOptions, Method, estimate
from .simulation import SimConfig, aggregate, replication_rng, run_raw, simulate_dataset

logger = logging.getLogger("ssaipw")

LOW_PRECISION_REPS = 100
MAX_SEED = 2**64 - 1


# ---------------------------------------------------------------- data files

@dataclass(frozen=True)
class Table:
    dataset: Dataset
    names: tuple[str, ...]  # covariate names in file order


def read_table(path: str | Path) -> Table:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row expected") from None
        if len(header) < 2 or header[0] != "r" or header[1] != "y":
            raise ParseError(f"{path}: header must start with 'r,y', got {header[:2]}")
        width = len(header)
        rs, ys, xs = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"row {line}: expected {width} fields, found {len(row)}")
            r_txt, y_txt = row[0].strip(), row[1].strip()
            if r_txt not in ("0", "1"):
                raise ParseError(f"row {line}: r must be 0 or 1, got {r_txt!r}")
            r = int(r_txt)
            if y_txt == "":
                if r == 1:
                    raise DataError(f"row {line}: y is missing on a labeled row")
                y = math.nan
            else:
                y = _number(y_txt, line, "y")
            rs.append(r)
            ys.append(y)
            xs.append([_number(c.strip(), line, header[j + 2]) for j, c in enumerate(row[2:])])
    if not rs:
        raise DataError(f"{path}: no data rows")
    cov = np.array(xs, dtype=float).reshape(len(rs), width - 2)
    data = Dataset(np.column_stack([np.ones(len(rs)), cov]), np.array(ys), np.array(rs))
    logger.info("read %s: N=%d, n=%d", path, data.n_total, data.n_labeled)
    return Table(data, tuple(header[2:]))


def _number(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"row {line}: column {column!r} is not numeric ({text!r})") from None
    if not math.isfinite(v):
        raise ParseError(f"row {line}: column {column!r} is not finite ({text!r})")
    return v


def ingest_csv(path: str | Path) -> Dataset:
    """Read ``r,y,x1,...`` into a Dataset with the intercept column prepended."""
    return read_table(path).dataset


def write_csv(dataset: Dataset, path: str | Path, names=None) -> None:
    """Inverse of ingest_csv; floats are written with repr so they round-trip."""
    d = dataset.d
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(d)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "y"] + names)
        for i in range(dataset.n_total):
            r = int(dataset.r[i])
            y = repr(float(dataset.y[i])) if r == 1 else ""
            w.writerow([r, y] + [repr(float(v)) for v in dataset.x[i, 1:]])


# ---------------------------------------------------------------- reports

def _fmt(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return "null"
    return format(v, ".17g")


def _encode(obj: Any, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def render(report: dict) -> str:
    return _encode(report) + "\n"


def _emit(report: dict, out: str | None) -> None:
    text = render(report)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    command: str
    data: str | None = None
    out: str | None = None
    seed: int | None = None
    method: str = Method.AIPW_RCAL.value
    methods: list | None = None  # simulate only; defaults to [method]
    estimand: str = Estimand.POPULATION.value
    z_cols: list | None = None
    link: str = "identity"
    knots: int = 49
    placement: str = KnotPlacement.FIXED_RANGE.value
    half_width: float = 3.0
    ps_grid: list | None = None
    or_grid: list | None = None
    folds: int = 5
    crossfit_folds: int = 5
    levels: list | None = None
    or_interactions: bool = True
    case: int = 1
    n: int = 2000
    reps: int = 500
    jobs: int = 1
    noise_sd: float | None = None
    n_boot: int = 999
    n_perm: int = 999

    def validate(self) -> None:
        if self.seed is not None and not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.command == "simulate" and self.seed is None:
            raise ConfigurationError("simulate needs an explicit seed")
        if self.command == "fit" and not self.data:
            raise ConfigurationError("fit needs a data file (--data)")
        for m in self.method_list():
            Method(m)
        Estimand(self.estimand)
        if self.link not in ("identity", "logit"):
            raise ConfigurationError(f"unknown link {self.link!r}")
        if self.case not in (1, 2, 3, 4, 5):
            raise ConfigurationError("case must be in 1..5")
        for name in ("n", "reps", "jobs", "knots", "n_boot", "n_perm"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        for lv in self.level_list():
            if not 0.0 < lv < 1.0:
                raise ConfigurationError(f"confidence level must lie in (0, 1), got {lv}")
        self.basis()
        self.fit_options()

    def method_list(self) -> list[str]:
        return list(self.methods) if self.methods else [self.method]

    def level_list(self) -> tuple[float, ...]:
        return tuple(float(v) for v in (self.levels or (0.90, 0.95)))

    def basis(self) -> BasisSpec:
        return BasisSpec(int(self.knots), KnotPlacement(self.placement), float(self.half_width))

    def fit_options(self) -> FitOptions:
        grid = lambda g: None if g is None else tuple(float(v) for v in g)  # noqa: E731
        return FitOptions(basis=self.basis(), folds=int(self.folds),
                          crossfit_folds=int(self.crossfit_folds), levels=self.level_list(),
                          or_interactions=bool(self.or_interactions),
                          ps_grid=grid(self.ps_grid), or_grid=grid(self.or_grid))

    def target(self) -> TargetSpec:
        link = Link.logit() if self.link == "logit" else Link.identity()
        return TargetSpec(tuple(int(c) for c in (self.z_cols or ())), Estimand(self.estimand), link)


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def _csv_list(kind):
    def parse(text: str) -> list:
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssaipw", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig keys")
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", help="CSV file with header r,y,x1,...")

    def model_flags(p):
        p.add_argument("--method", help="aipw-rcal, aipw-rml, aipw-cf, ipw or plain"
                       " (simulate accepts a comma list)")
        p.add_argument("--estimand", choices=[e.value for e in Estimand])
        p.add_argument("--z-cols", type=_csv_list(int), dest="z_cols",
                       help="covariate indices forming Z besides the intercept, e.g. 1,2")
        p.add_argument("--link", choices=["identity", "logit"])
        p.add_argument("--folds", type=int, help="CV folds for the penalty (0: last grid value)")
        p.add_argument("--level", type=_csv_list(float), dest="levels",
                       help="confidence levels, e.g. 0.9,0.95")

    fit = sub.add_parser("fit", parents=[common], help="estimate beta on a CSV file")
    model_flags(fit)
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo study")
    model_flags(sim)
    sim.add_argument("--case", type=int)
    sim.add_argument("--n", type=int, help="rows per replication")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    diag = sub.add_parser("diagnose", parents=[common], help="covariate-shift tests")
    diag.add_argument("--case", type=int, help="simulate data when --data is absent")
    diag.add_argument("--n", type=int)
    diag.add_argument("--n-boot", type=int, dest="n_boot")
    diag.add_argument("--n-perm", type=int, dest="n_perm")
    gen = sub.add_parser("generate", parents=[common], help="write one simulated data set as CSV")
    gen.add_argument("--case", type=int)
    gen.add_argument("--n", type=int)
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.command == "simulate" and "method" in values and "," in str(values["method"]):
        values["methods"] = [m.strip() for m in values.pop("method").split(",")]
    try:
        cfg = RunConfig(command=args.command, **values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    try:
        cfg.validate()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SSAIPWError):
            raise
        raise ConfigurationError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------- commands

def _vec(report, level, side):
    return getattr(report, side)[level]


def cmd_fit(cfg: RunConfig) -> dict:
    table = read_table(cfg.data)
    data = table.dataset
    seed = int(cfg.seed or 0)
    target = cfg.target()
    rep = estimate(data, target, cfg.method, cfg.fit_options(), seed)
    z_names = ["(intercept)"] + [table.names[c - 1] for c in target.non_intercept]
    out = {
        "status": "ok",
        "command": "fit",
        "method": rep.method,
        "estimand": rep.estimand,
        "link": cfg.link,
        "seed": seed,
        "N": data.n_total,
        "n": data.n_labeled,
        "coefficients": z_names,
        "beta_hat": rep.beta_hat,
    }
    if cfg.method != Method.IPW.value:
        out["se"] = rep.se
        out["sigma_hat"] = rep.sigma_hat
        out["variance_scale"] = rep.n_scale
        out["ci"] = {format(lv, "g"): {"lower": rep.ci_lower[lv], "upper": rep.ci_upper[lv]}
                     for lv in rep.levels}
    nuis = rep.nuisance
    out["nuisance"] = {
        "lambda_gamma": nuis.get("lambda_gamma"),
        "lambda_alpha": nuis.get("lambda_alpha"),
        "ps_active": nuis.get("ps_active"),
        "or_active": nuis.get("or_active"),
        "n_floored": nuis.get("n_floored"),
    }
    return out


def _sim_config(cfg: RunConfig) -> SimConfig:
    kw = dict(case=cfg.case, n_total=cfg.n, replications=cfg.reps, seed=int(cfg.seed),
              methods=tuple(cfg.method_list()), basis=cfg.basis(), levels=cfg.level_list(),
              folds=cfg.folds, or_interactions=cfg.or_interactions)
    if cfg.noise_sd is not None:
        kw["noise_sd"] = float(cfg.noise_sd)
    return SimConfig(**kw)


ROWS = (("Bias", "bias"), ("sqrt_Var", "sqrt_var"), ("sqrt_EVar", "sqrt_evar"),
        ("CP90", "cp90"), ("CP95", "cp95"))


def cmd_simulate(cfg: RunConfig) -> dict:
    sim = _sim_config(cfg)
    results = run_raw(sim, jobs=int(cfg.jobs))
    metrics = aggregate(sim, results)
    methods = [m.value for m in sim.methods]
    tables = []
    for j in range(len(metrics.true_beta)):
        rows = {}
        for label, attr in ROWS:
            rows[label] = {m: getattr(metrics.metrics(m, j), attr) for m in methods}
        tables.append({"coefficient": j, "true_beta": metrics.true_beta[j], "rows": rows})
    per_rep = []
    for res in results:
        for m in methods:
            beta = res.beta.get(m)
            per_rep.append({
                "rep": res.rep, "n": res.n_labeled, "method": m,
                "beta_hat": beta, "se": res.se.get(m) if beta is not None else None,
                "error": res.errors.get(m),
            })
    config = sim.describe()
    config.pop("oracle_n", None)
    return {
        "status": "ok",
        "command": "simulate",
        "config": config,
        "replications": metrics.replications,
        "low_precision": metrics.replications < LOW_PRECISION_REPS,
        "mean_labeled": metrics.mean_labeled,
        "columns": methods,
        "failures": {m: metrics.methods[m]["n_failed"] for m in methods},
        "table": tables,
        "per_replication": per_rep,
    }


def format_table(report: dict) -> str:
    """Plain-text rendering of the simulate table (one block per coefficient)."""
    cols = report["columns"]
    lines = []
    for block in report["table"]:
        lines.append(f"coefficient {block['coefficient']} (true {block['true_beta']:.4f})")
        lines.append(" " * 10 + "".join(f"{c:>12}" for c in cols))
        for label, row in block["rows"].items():
            cells = "".join(f"{'-' if row[c] is None or math.isnan(row[c]) else f'{row[c]:.3f}':>12}"
                            for c in cols)
            lines.append(f"{label:<10}{cells}")
    if report["low_precision"]:
        lines.append(f"note: fewer than {LOW_PRECISION_REPS} replications; coverage is imprecise")
    return "\n".join(lines)


def _diagnose_table(cfg: RunConfig) -> Table:
    if cfg.data:
        return read_table(cfg.data)
    rng = replication_rng(int(cfg.seed or 0), 0)
    data = simulate_dataset(cfg.case, cfg.n, rng, cfg.basis())
    return Table(data, tuple(f"x{j + 1}" for j in range(data.d)))


def cmd_diagnose(cfg: RunConfig) -> dict:
    table = _diagnose_table(cfg)
    data = table.dataset
    data.require_both_groups()
    seed = int(cfg.seed or 0)
    ss = np.random.SeedSequence(seed)
    streams = ss.spawn(data.d + 1)
    lab = data.labeled
    cov = data.x[:, 1:]
    ks = []
    for j, name in enumerate(table.names):
        stat, p = ks_two_sample_bootstrap(cov[lab, j], cov[~lab, j], int(cfg.n_boot),
                                          np.random.default_rng(streams[j]))
        ks.append({"covariate": name, "statistic": stat, "p_value": p})
    mmd, p = mmd_permutation_test(cov[lab], cov[~lab], int(cfg.n_perm),
                                  np.random.default_rng(streams[-1]))
    return {
        "status": "ok",
        "command": "diagnose",
        "seed": seed,
        "N": data.n_total,
        "n": data.n_labeled,
        "ks": ks,
        "n_boot": int(cfg.n_boot),
        "mmd": {"kernel": "exp(-||u-v||^2)", "statistic": mmd, "p_value": p,
                "n_perm": int(cfg.n_perm)},
    }


def cmd_generate(cfg: RunConfig) -> dict:
    if not cfg.out:
        raise ConfigurationError("generate needs --out")
    rng = replication_rng(int(cfg.seed or 0), 0)
    data = simulate_dataset(cfg.case, cfg.n, rng, cfg.basis())
    write_csv(data, cfg.out)
    return {}


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "diagnose": cmd_diagnose,
            "generate": cmd_generate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = getattr(args, "out", None)
    try:
        cfg = resolve(args)
        report = COMMANDS[cfg.command](cfg)
    except SSAIPWError as exc:
        err = {"status": "error", "command": args.command,
               "error": {"kind": exc.kind, "message": str(exc)}}
        if args.command == "generate":
            out = None
        _emit(err, out)
        print(f"ssaipw: {exc.kind} error: {exc}", file=sys.stderr)
        return 1
    if cfg.command == "generate":
        return 0
    _emit(report, cfg.out)
    if cfg.command == "simulate":
        print(format_table(report), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
