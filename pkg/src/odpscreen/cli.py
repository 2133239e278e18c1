"""Command-line interface: simulate, screen, benchmark, qvalue.

Every option can also come from a flat ``key = value`` config file
passed as ``--config``; explicit flags take precedence.  Each run
echoes its effective configuration to ``provenance.txt`` in the output
directory in the same format, so a past run can be repeated with
``--config provenance.txt``.

Exit codes: 0 success, 1 runtime failure, 2 validation or usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .data import ColumnSchema, DatasetError, load_dataset, write_dataset
from .fitting import write_fit_sidecar
from .pipeline import ScreenOptions, run_qvalue, run_screen
from .prior import write_em_trace, write_prior
from .propensity import (ConstantPropensity, LassoPropensity,
                         SuppliedPropensity)
from .screening import write_report
from .simulation import (SimConfig, generate_replicate, run_benchmark,
                         write_benchmark, write_truth)

__all__ = ["main", "build_parser"]

logger = logging.getLogger(__name__)

# flags that take no value; config files give them true/false
_BOOLEAN_KEYS = {"estimate-propensity", "em-trace"}


class UsageError(ValueError):
    """Bad flag value or flag combination; exits with status 2."""


def _parse_levels(text: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"cannot parse FDR levels '{text}'") from None
    if not levels or any(not 0.0 < lv < 1.0 for lv in levels):
        raise UsageError("FDR levels must lie strictly inside (0, 1)")
    return levels


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"cannot parse integer list '{text}'") from None
    if not values:
        raise UsageError("empty integer list")
    return values


def _parse_outcome(text: str) -> str | tuple[str, str]:
    parts = [tok.strip() for tok in text.split(",") if tok.strip()]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return (parts[0], parts[1])
    raise UsageError("--outcome takes one column (binary) or time,event (survival)")


def _parse_propensity(text: str):
    """Parse constant:VALUE | column:NAME | lasso[:folds=K[,grid=G]]."""
    head, _, rest = text.partition(":")
    if head == "constant":
        try:
            value = float(rest)
        except ValueError:
            raise UsageError(f"bad constant propensity '{rest}'") from None
        if not 0.0 < value < 1.0:
            raise UsageError("constant propensity must lie in (0, 1)")
        return ConstantPropensity(value)
    if head == "column":
        if not rest:
            raise UsageError("column propensity needs a column name")
        return ("column", rest)
    if head == "lasso":
        folds, grid = 10, 100
        for token in filter(None, rest.split(",")):
            key, _, val = token.partition("=")
            try:
                if key == "folds":
                    folds = int(val)
                elif key == "grid":
                    grid = int(val)
                else:
                    raise UsageError(f"unknown lasso option '{key}'")
            except ValueError:
                raise UsageError(f"bad lasso option '{token}'") from None
        return LassoPropensity(folds=folds, grid_size=grid)
    raise UsageError(f"unknown propensity spec '{text}'")


def _add_data_flags(sub):
    sub.add_argument("--data", required=True, help="input CSV path")
    sub.add_argument("--outcome", default="y",
                     help="outcome column, or time,event pair for survival")
    sub.add_argument("--treatment", default="trt", help="treatment column")
    sub.add_argument("--confounders", default="",
                     help="comma-separated confounder columns")
    sub.add_argument("--propensity", default="constant:0.5",
                     help="constant:VALUE | column:NAME | lasso[:folds=K,grid=G]")


def _add_common_flags(sub):
    sub.add_argument("--fdr", default="0.05,0.10,0.15,0.20",
                     help="comma-separated FDR targets")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel workers; 0 means all cores")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--config", default=None,
                     help="flat key = value config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odpscreen",
        description="Model-based screening of treatment-modifying biomarkers",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="write one synthetic cohort")
    sim.add_argument("--outcome", choices=("binary", "survival"), default="binary")
    sim.add_argument("--pi0", type=float, default=0.8, help="null probability")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--p", type=int, default=3000)
    _add_common_flags(sim)

    scr = subs.add_parser("screen", help="screen a dataset end to end")
    _add_data_flags(scr)
    scr.add_argument("--loss", choices=("squared", "binomial", "cox"), default=None)
    scr.add_argument("--method", choices=("plugin", "normal"), default="plugin")
    scr.add_argument("--knots", type=int, default=100)
    scr.add_argument("--em-tol", type=float, default=1e-8)
    scr.add_argument("--em-maxiter", type=int, default=5000)
    scr.add_argument("--mstep", choices=("weighted", "appendix"), default="weighted")
    scr.add_argument("--em-trace", action="store_true",
                     help="also write the EM iteration history")
    _add_common_flags(scr)

    ben = subs.add_parser("benchmark", help="Monte-Carlo screening benchmark")
    ben.add_argument("--outcome", choices=("binary", "survival"), default="binary")
    ben.add_argument("--pi0", type=float, default=0.8)
    ben.add_argument("--n", type=int, default=1000)
    ben.add_argument("--p", type=int, default=3000)
    ben.add_argument("--reps", type=int, default=50)
    ben.add_argument("--knots", type=int, default=100,
                     help="knot count for the plug-in method")
    ben.add_argument("--normal-knots", default="100",
                     help="comma-separated knot counts for the normal method")
    ben.add_argument("--estimate-propensity", action="store_true",
                     help="estimate the propensity by lasso instead of using truth")
    ben.add_argument("--mstep", choices=("weighted", "appendix"), default="weighted")
    ben.add_argument("--em-tol", type=float, default=1e-8)
    ben.add_argument("--em-maxiter", type=int, default=5000)
    _add_common_flags(ben)

    qv = subs.add_parser("qvalue", help="competitor statistics and q-values only")
    _add_data_flags(qv)
    qv.add_argument("--loss", choices=("squared", "binomial", "cox"), default=None)
    _add_common_flags(qv)
    return parser


# ---------------------------------------------------------------------------
# config file handling
# ---------------------------------------------------------------------------


def _read_config(path: str) -> list[tuple[str, str]]:
    entries = []
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                entries.append((key.strip().replace("_", "-"), value.strip()))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    return entries


def _config_tokens(entries: list[tuple[str, str]]) -> list[str]:
    tokens = []
    for key, value in entries:
        if key in _BOOLEAN_KEYS:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(f"--{key}")
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"boolean config key '{key}' got '{value}'")
        elif value:
            # empty value means the option was left unset
            tokens.extend([f"--{key}", value])
    return tokens


def _splice_config(argv: list[str]) -> list[str]:
    """Expand --config into equivalent flags placed before explicit ones."""
    args = list(argv)
    paths = []
    i = 0
    while i < len(args):
        if args[i] == "--config":
            if i + 1 >= len(args):
                raise UsageError("--config needs a file path")
            paths.append(args[i + 1])
            del args[i:i + 2]
        elif args[i].startswith("--config="):
            paths.append(args[i].split("=", 1)[1])
            del args[i]
        else:
            i += 1
    if not paths:
        return args
    if not args or args[0].startswith("-"):
        raise UsageError("--config requires a subcommand")
    injected = []
    for path in paths:
        injected.extend(_config_tokens(_read_config(path)))
    return [args[0], *injected, *args[1:]]


def _write_provenance(path: str, command: str, pairs: list[tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# odpscreen {__version__}\n")
        fh.write(f"# command = {command}\n")
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def _resolve_workers(workers: int) -> int:
    if workers < 0:
        raise UsageError("--workers must be >= 0")
    return workers if workers > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_for_screen(args):
    outcome = _parse_outcome(args.outcome)
    confounders = tuple(tok.strip() for tok in args.confounders.split(",")
                        if tok.strip())
    spec = _parse_propensity(args.propensity)
    ignore = ()
    if isinstance(spec, tuple):
        ignore = (spec[1],)
    schema = ColumnSchema(outcome=outcome, treatment=args.treatment,
                          confounders=confounders, ignore=ignore)
    try:
        dataset = load_dataset(args.data, schema)
        if isinstance(spec, tuple):
            column = spec[1]
            frame = pd.read_csv(args.data, usecols=[column])
            values = np.asarray(frame[column], dtype=np.float64)
            spec = SuppliedPropensity(values)
    except (OSError, ValueError) as exc:
        # unreadable file or invalid propensity column: caller error
        raise UsageError(str(exc)) from None
    return dataset, spec


def _screen_options(args, spec) -> ScreenOptions:
    return ScreenOptions(
        loss=getattr(args, "loss", None),
        method=getattr(args, "method", "plugin"),
        propensity=spec,
        knots=getattr(args, "knots", 100),
        fdr_levels=_parse_levels(args.fdr),
        em_tol=getattr(args, "em_tol", 1e-8),
        em_max_iter=getattr(args, "em_maxiter", 5000),
        mstep=getattr(args, "mstep", "weighted"),
        seed=args.seed,
        workers=_resolve_workers(args.workers),
    )


def _data_provenance(args) -> list[tuple[str, str]]:
    return [
        ("data", args.data),
        ("outcome", args.outcome),
        ("treatment", args.treatment),
        ("confounders", args.confounders),
        ("propensity", args.propensity),
    ]


def cmd_simulate(args) -> int:
    levels = _parse_levels(args.fdr)
    try:
        cfg = SimConfig(n=args.n, p=args.p, outcome=args.outcome,
                        pi_null=args.pi0, replications=1, seed=args.seed,
                        fdr_levels=levels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    dataset, truth, _ = generate_replicate(cfg, 0)
    data_path = os.path.join(args.out, "data.csv")
    truth_path = os.path.join(args.out, "truth.tsv")
    write_dataset(dataset, data_path)
    write_truth(truth, truth_path)
    _write_provenance(os.path.join(args.out, "provenance.txt"), "simulate", [
        ("outcome", args.outcome),
        ("pi0", repr(args.pi0)),
        ("n", str(args.n)),
        ("p", str(args.p)),
        ("fdr", args.fdr),
        ("seed", str(args.seed)),
        ("workers", str(args.workers)),
        ("out", args.out),
    ])
    logger.info("wrote %s and %s", data_path, truth_path)
    return 0


def cmd_screen(args) -> int:
    dataset, spec = _load_for_screen(args)
    options = _screen_options(args, spec)
    run = run_screen(dataset, options)
    os.makedirs(args.out, exist_ok=True)
    write_report(run.result, os.path.join(args.out, "report.tsv"))
    write_fit_sidecar(run.fits, os.path.join(args.out, "fit_diagnostics.tsv"))
    write_prior(run.prior, os.path.join(args.out, "prior.tsv"))
    if args.em_trace:
        write_em_trace(run.trace, os.path.join(args.out, "em_trace.tsv"))
    _write_provenance(os.path.join(args.out, "provenance.txt"), "screen",
                      _data_provenance(args) + [
        ("loss", args.loss or ""),
        ("method", args.method),
        ("knots", str(args.knots)),
        ("fdr", args.fdr),
        ("em-tol", repr(args.em_tol)),
        ("em-maxiter", str(args.em_maxiter)),
        ("mstep", args.mstep),
        ("em-trace", "true" if args.em_trace else "false"),
        ("seed", str(args.seed)),
        ("workers", str(args.workers)),
        ("out", args.out),
    ])
    for sel in run.result.selections:
        logger.info("FDR %.2f: %d selected (estimated FDR %.4f)",
                    sel.level, sel.indices.size, sel.fdr)
    return 0


def cmd_benchmark(args) -> int:
    try:
        cfg = SimConfig(
            n=args.n, p=args.p, outcome=args.outcome, pi_null=args.pi0,
            replications=args.reps, seed=args.seed,
            fdr_levels=_parse_levels(args.fdr), plugin_knots=args.knots,
            normal_knots=_parse_int_list(args.normal_knots),
            estimate_propensity=args.estimate_propensity,
            workers=_resolve_workers(args.workers), em_tol=args.em_tol,
            em_max_iter=args.em_maxiter, mstep=args.mstep,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_benchmark(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_benchmark(result, os.path.join(args.out, "benchmark.tsv"))
    _write_provenance(os.path.join(args.out, "provenance.txt"), "benchmark", [
        ("outcome", args.outcome),
        ("pi0", repr(args.pi0)),
        ("n", str(args.n)),
        ("p", str(args.p)),
        ("reps", str(args.reps)),
        ("knots", str(args.knots)),
        ("normal-knots", args.normal_knots),
        ("estimate-propensity", "true" if args.estimate_propensity else "false"),
        ("mstep", args.mstep),
        ("em-tol", repr(args.em_tol)),
        ("em-maxiter", str(args.em_maxiter)),
        ("fdr", args.fdr),
        ("seed", str(args.seed)),
        ("workers", str(args.workers)),
        ("out", args.out),
    ])
    for method in result.methods:
        logger.info("%s: avg true positives %s", method,
                    np.array2string(result.avg_tp(method), precision=2))
    return 0


def cmd_qvalue(args) -> int:
    dataset, spec = _load_for_screen(args)
    options = _screen_options(args, spec)
    run = run_qvalue(dataset, options)
    os.makedirs(args.out, exist_ok=True)
    write_report(run.result, os.path.join(args.out, "report.tsv"))
    write_fit_sidecar(run.fits, os.path.join(args.out, "fit_diagnostics.tsv"))
    _write_provenance(os.path.join(args.out, "provenance.txt"), "qvalue",
                      _data_provenance(args) + [
        ("loss", args.loss or ""),
        ("fdr", args.fdr),
        ("seed", str(args.seed)),
        ("workers", str(args.workers)),
        ("out", args.out),
    ])
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "screen": cmd_screen,
    "benchmark": cmd_benchmark,
    "qvalue": cmd_qvalue,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        spliced = _splice_config(list(argv))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"odpscreen: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(spliced)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, DatasetError) as exc:
        print(f"odpscreen: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: exit 1 per contract
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
