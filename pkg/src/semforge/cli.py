"""Command-line interface: ``semforge {fit, bootstrap, simulate, bench}``.

Matrices are TSV (or CSV, chosen by the ``.csv`` extension) with one header
row of variable names and one row per observation. The instrument assignment
is a JSON object mapping each endogenous name to a list of exogenous names.

Exit codes: 0 success, 2 validation error, 3 I/O or format error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._kernels import BACKEND
from ._parallel import SIM_DATA_TAG, SIM_NET_TAG, resolve_threads, substream_seed
from .core import DataSet, ExoAssignment, SemError, ValidationError, validate
from .pipeline import BootstrapConfig, FitConfig, bootstrap_edges, fit_system
from .ridge import GcvSearchConfig, StageOneStrategy
from .simgen import METRIC_COLUMNS, ErrorSpec, NetworkSpec, gen_dataset, gen_network, run_experiment

log = logging.getLogger("semforge")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class InputFormatError(Exception):
    """Unreadable or malformed input file; the message carries the location."""


# --------------------------------------------------------------------------- I/O


def _delimiter(path: Path) -> str:
    return "," if path.suffix.lower() == ".csv" else "\t"


def read_matrix(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a delimited numeric matrix with a header row.

    Returns
    -------
    names : tuple of str
        Column names from the header.
    values : ndarray, shape (rows, columns)

    Raises
    ------
    InputFormatError
        On a missing file, a ragged row, a duplicate name or a non-numeric
        cell. Line and column numbers in the message are 1-based.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputFormatError(f"{path}: cannot open: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=_delimiter(path))
        try:
            header = next(reader)
        except StopIteration:
            raise InputFormatError(f"{path}: line 1: empty file, expected a header row") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputFormatError(f"{path}: line 1: {exc}") from exc
        names = tuple(h.strip() for h in header)
        if not names or any(not h for h in names):
            raise InputFormatError(f"{path}: line 1: empty column name in header")
        seen: dict[str, int] = {}
        for col, name in enumerate(names, start=1):
            if name in seen:
                raise InputFormatError(f"{path}: line 1, column {col}: duplicate name {name!r}")
            seen[name] = col
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(names):
                    raise InputFormatError(
                        f"{path}: line {line}: expected {len(names)} fields, found {len(row)}"
                    )
                vals = []
                for col, cell in enumerate(row, start=1):
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise InputFormatError(
                            f"{path}: line {line}, column {col}: cannot parse {cell!r} as a number"
                        ) from None
                rows.append(vals)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputFormatError(f"{path}: line {reader.line_num}: {exc}") from exc
    values = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return names, values


def read_assignment(path, endo_names: Sequence[str], exo_names: Sequence[str]) -> ExoAssignment:
    """Parse the JSON instrument assignment and map names to column indices.

    Unknown names raise :class:`ValidationError`; an endogenous name missing
    from the file gets an empty set (reported later by validation).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFormatError(f"{path}: cannot open: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: not UTF-8: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise InputFormatError(f"{path}: line 1, column 1: expected a JSON object of name -> [names]")
    endo_idx = {n: j for j, n in enumerate(endo_names)}
    exo_idx = {n: i for i, n in enumerate(exo_names)}
    sets: list[tuple[int, ...]] = [()] * len(endo_names)
    for name, members in obj.items():
        if name not in endo_idx:
            raise ValidationError(f"assignment names unknown endogenous variable {name!r}")
        if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
            raise InputFormatError(f"{path}: entry {name!r} must be a list of exogenous names")
        unknown = [m for m in members if m not in exo_idx]
        if unknown:
            raise ValidationError(f"assignment for {name!r} names unknown exogenous variable(s) {unknown}")
        sets[endo_idx[name]] = tuple(exo_idx[m] for m in members)
    return ExoAssignment(tuple(sets))


def load_inputs(y_path, x_path, assign_path) -> tuple[DataSet, ExoAssignment]:
    endo, Y = read_matrix(y_path)
    exo, X = read_matrix(x_path)
    ds = DataSet(Y, X, endo, exo)
    return ds, read_assignment(assign_path, endo, exo)


def _num(v: float) -> str:
    """Shortest round-trip text for a float; stable across runs and platforms."""
    return repr(float(v))


def _clean(obj):
    """Make a structure JSON-safe: NaN/inf become None, arrays become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table(path: Path, header: Sequence[str], rows, delimiter: str | None = None) -> None:
    delimiter = delimiter or _delimiter(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_matrix(path: Path, names: Sequence[str], M: np.ndarray) -> None:
    write_table(path, names, (list(map(float, r)) for r in np.asarray(M)))


# ------------------------------------------------------------------ run config


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one CLI invocation."""

    command: str
    out: Path
    inputs: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    boot: BootstrapConfig | None = None
    spec: NetworkSpec | None = None
    n: tuple[int, ...] = ()
    replicates: int = 0
    strategies: tuple[str, ...] = ()
    timing: bool = True
    threads: int | None = None
    seed: int = 0

    def check(self) -> None:
        for label, p in self.inputs.items():
            if not Path(p).is_file():
                raise InputFormatError(f"{label} file not found: {p}")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputFormatError(f"cannot create output directory {self.out}: {exc.strerror or exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise InputFormatError(f"output directory {self.out} is not writable")

    def echo(self) -> dict:
        d = {
            "command": self.command,
            "version": __version__,
            "kernel": BACKEND,
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "seed": self.seed,
            "fit": self.fit.as_dict(),
        }
        if self.boot is not None:
            d["bootstrap"] = {
                "B": self.boot.B,
                "master_seed": self.boot.master_seed,
                "frequency_threshold": self.boot.frequency_threshold,
            }
        if self.spec is not None:
            d["network"] = self.spec.as_dict()
        if self.n:
            d["n"] = list(self.n)
        if self.replicates:
            d["replicates"] = self.replicates
        if self.strategies:
            d["strategies"] = list(self.strategies)
        if self.command == "bench":
            d["timing"] = self.timing
        return d


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
    p.add_argument("--seed", type=_u64, default=0, help="master seed (unsigned 64-bit)")
    p.add_argument(
        "--threads", type=int, default=None, help="worker threads, 0 = all cores (default: $SEMFORGE_THREADS or 1)"
    )


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=1.0, help="adaptive weight exponent")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--path-length", type=_positive_int, default=50)
    p.add_argument("--cv-rule", choices=("paired", "1se", "min"), default="paired")
    p.add_argument("--stage1", choices=[s.value for s in StageOneStrategy], default="ridge")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--y", required=True, type=Path, help="endogenous matrix (TSV/CSV with header)")
    p.add_argument("--x", required=True, type=Path, help="exogenous matrix (TSV/CSV with header)")
    p.add_argument("--assign", required=True, type=Path, help="JSON map: endogenous name -> [exogenous names]")


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    d = NetworkSpec()
    p.add_argument("--p", type=int, default=d.p, help="number of endogenous variables")
    p.add_argument("--topology", choices=("acyclic", "cyclic"), default=d.topology)
    p.add_argument("--mean-out-degree", type=float, default=d.mean_out_degree)
    p.add_argument("--ee-count", type=int, default=d.ee_count, help="instruments per endogenous variable")
    p.add_argument("--hubs", type=int, default=d.hubs)
    p.add_argument("--hub-degree", type=float, default=d.hub_degree)
    p.add_argument("--effect-min", type=float, default=d.effect_range[0])
    p.add_argument("--effect-max", type=float, default=d.effect_range[1])
    p.add_argument("--error", choices=("normal", "t"), default=d.error.kind)
    p.add_argument("--error-sd", type=float, default=d.error.sd)
    p.add_argument("--error-df", type=float, default=d.error.df)
    p.add_argument("--ee-correlation", type=float, default=None)
    p.add_argument("--ee-effects", type=_floats, default=None, help="comma-separated, one per instrument")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernel)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the network once and write the edge list")
    _add_input_flags(fit)
    _add_common(fit)
    _add_fit_flags(fit)

    boot = sub.add_parser("bootstrap", help="edge selection frequencies over row resamples")
    _add_input_flags(boot)
    _add_common(boot)
    _add_fit_flags(boot)
    boot.add_argument("--boot-b", type=_positive_int, default=100, help="number of resamples")
    boot.add_argument("--boot-threshold", type=float, default=0.0, help="drop edges below this frequency")

    sim = sub.add_parser("simulate", help="write a synthetic data set and its true network")
    _add_common(sim)
    _add_network_flags(sim)
    sim.add_argument("--n", type=_positive_int, default=400, help="observations")

    bench = sub.add_parser("bench", help="power/FDR simulation study over sample sizes")
    _add_common(bench)
    _add_network_flags(bench)
    _add_fit_flags(bench)
    bench.add_argument("--n", type=_ints, default=(100, 400, 1000), help="comma-separated sample sizes")
    bench.add_argument("--replicates", type=_positive_int, default=20)
    bench.add_argument(
        "--strategies", default="ridge", help="comma-separated stage-one strategies (ridge, alasso)"
    )
    bench.add_argument(
        "--no-timing", action="store_true", help="write fit_seconds as 0 so the metrics file is byte-reproducible"
    )
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    threads = args.threads
    fit = FitConfig()
    if hasattr(args, "stage1"):
        fit = FitConfig(
            stage_one=args.stage1,
            gcv=GcvSearchConfig(),
            delta=args.delta,
            folds=args.cv_folds,
            path_length=args.path_length,
            cv_rule=args.cv_rule,
            master_seed=args.seed,
            threads=threads,
        )
    inputs = {}
    if hasattr(args, "y"):
        inputs = {"y": args.y, "x": args.x, "assign": args.assign}
    boot = None
    if args.command == "bootstrap":
        boot = BootstrapConfig(args.boot_b, args.seed, args.boot_threshold)
    spec = None
    if hasattr(args, "topology"):
        spec = NetworkSpec(
            p=args.p,
            topology=args.topology,
            mean_out_degree=args.mean_out_degree,
            ee_count=args.ee_count,
            hubs=args.hubs,
            hub_degree=args.hub_degree,
            effect_range=(args.effect_min, args.effect_max),
            error=ErrorSpec(args.error, args.error_sd, args.error_df),
            ee_correlation=args.ee_correlation,
            ee_effects=args.ee_effects,
            seed=args.seed if args.command == "bench" else substream_seed(args.seed, SIM_NET_TAG),
        )
    n: tuple[int, ...] = ()
    if args.command == "simulate":
        n = (args.n,)
    elif args.command == "bench":
        n = tuple(args.n)
        if not n or min(n) < 2:
            raise ValueError("--n needs sample sizes >= 2")
    strategies = ()
    if args.command == "bench":
        strategies = tuple(StageOneStrategy(s.strip()).value for s in args.strategies.split(",") if s.strip())
    return RunConfig(
        command=args.command,
        out=args.out,
        inputs=inputs,
        fit=fit,
        boot=boot,
        spec=spec,
        n=n,
        replicates=getattr(args, "replicates", 0),
        strategies=strategies,
        timing=not getattr(args, "no_timing", False),
        threads=threads,
        seed=args.seed,
    )


# -------------------------------------------------------------------- commands


def _load_checked(cfg: RunConfig) -> tuple[DataSet, ExoAssignment]:
    ds, ea = load_inputs(cfg.inputs["y"], cfg.inputs["x"], cfg.inputs["assign"])
    rep = validate(ds, ea)
    if not rep.ok:
        raise ValidationError(rep.message)
    for w in rep.warnings:
        log.warning(w)
    return ds, ea


def cmd_fit(cfg: RunConfig) -> int:
    ds, ea = _load_checked(cfg)
    est = fit_system(ds, ea, cfg.fit, threads=cfg.threads)
    rows = sorted(est.edges(), key=lambda e: (e[0], e[1]))
    write_table(
        cfg.out / "edges.tsv",
        ("source", "target", "effect"),
        ((ds.endo_names[j], ds.endo_names[k], v) for j, k, v in rows),
    )
    report = {
        "config": cfg.echo(),
        "n": ds.n,
        "p": ds.p,
        "q": ds.q,
        "edges": len(rows),
        "failed_equations": [ds.endo_names[k] for k in est.failed_equations],
        "taus": dict(zip(ds.endo_names, est.taus.tolist())),
        "lambdas": dict(zip(ds.endo_names, est.lambdas.tolist())),
        "equations": [
            {
                "name": ds.endo_names[d.k],
                "active": d.active,
                "cv_error": d.cv_error,
                "iterations": d.iterations,
                "converged": d.converged,
                "failed": d.failed,
                "message": d.message,
                "dropped_instruments": [ds.exo_names[i] for i in d.dropped_instruments],
            }
            for d in est.diagnostics
        ],
    }
    write_json(cfg.out / "report.json", report)
    log.info("wrote %d edges to %s", len(rows), cfg.out / "edges.tsv")
    return EXIT_OK


def cmd_bootstrap(cfg: RunConfig) -> int:
    ds, ea = _load_checked(cfg)
    table = bootstrap_edges(ds, ea, cfg.fit, cfg.boot, threads=cfg.threads)
    write_table(
        cfg.out / "edges.tsv",
        ("source", "target", "effect", "frequency", "B"),
        ((ds.endo_names[r.source], ds.endo_names[r.target], r.effect, r.frequency, r.B) for r in table),
    )
    report = {
        "config": cfg.echo(),
        "n": ds.n,
        "p": ds.p,
        "q": ds.q,
        "requested": table.requested,
        "used": table.B,
        "skipped": table.skipped,
        "threshold": table.threshold,
        "edges": len(table),
    }
    write_json(cfg.out / "report.json", report)
    if table.skipped:
        log.warning("%d of %d resamples skipped as degenerate", table.skipped, table.requested)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    gt = gen_network(cfg.spec)
    ds = gen_dataset(gt, cfg.n[0], seed=substream_seed(cfg.seed, SIM_DATA_TAG))
    write_matrix(cfg.out / "Y.tsv", ds.endo_names, ds.Y)
    write_matrix(cfg.out / "X.tsv", ds.exo_names, ds.X)
    write_json(
        cfg.out / "assign.json",
        {ds.endo_names[k]: [ds.exo_names[i] for i in S] for k, S in enumerate(gt.ea.sets)},
    )
    truth = sorted(gt.edges())
    write_table(
        cfg.out / "truth_edges.tsv",
        ("source", "target", "effect"),
        ((ds.endo_names[j], ds.endo_names[k], float(gt.Gamma[j, k])) for j, k in truth),
    )
    write_json(cfg.out / "truth.json", {"config": cfg.echo(), "n": ds.n, "edges": len(truth)})
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    grid = [(cfg.spec, n) for n in cfg.n]
    fit = replace(cfg.fit, threads=1)
    table = run_experiment(grid, cfg.replicates, fit, cfg.strategies, seed=cfg.seed, threads=cfg.threads)
    write_table(
        cfg.out / "metrics.csv",
        METRIC_COLUMNS,
        (
            (r.topology, r.density, r.ee_count, r.n, r.strategy, r.replicate, r.power, r.fdr,
             r.fit_seconds if cfg.timing else 0.0)
            for r in table.rows
        ),
    )
    summary = table.summary()
    cols = list(summary[0]) if summary else []
    if not cfg.timing:
        cols = [c for c in cols if c != "fit_seconds_mean"]
    write_table(cfg.out / "summary.csv", cols, ([s[c] for c in cols] for s in summary))
    write_json(cfg.out / "bench.json", {"config": cfg.echo(), "rows": len(table), "failed": sum(bool(r.error) for r in table.rows)})
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "bootstrap": cmd_bootstrap, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="semforge: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads is not None:
            resolve_threads(args.threads)
        cfg = config_from_args(args)
        cfg.check()
        return COMMANDS[cfg.command](cfg)
    except InputFormatError as exc:
        print(f"semforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"semforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"semforge: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        # bad parameter values surface as validation failures of the run config
        print(f"semforge: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SemError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"semforge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
