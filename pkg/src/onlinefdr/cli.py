"""``onlinefdr run | simulate | verify``.

Exit codes: 0 success, 1 verification outcome not as expected,
2 bad input or parameters, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .core import InvariantError, ScheduleSpec, audit_running_sums
from .estimators import fdp_hat_0_path, fdp_hat_lambda_path
from .procedures import (PROCEDURES, AffineCap, ProcedureConfig, StoppingRule, family, run_reference,
                         run_streams, supports_kernels)
from .simulate import (
    DESK_GRID,
    FULL_GRID,
    GRID_PROCEDURES,
    batch_schedule,
    format_float,
    grid_scenarios,
    plot_results,
    results_to_csv,
    run_grid,
)
from .verifier import CONSTRAINT_TOL, audit_constraints, check_condition_1, resolve_named

EXIT_OK, EXIT_EXPECTATION, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3

RUN_COLUMNS = ("index", "p", "alpha", "lambda", "rejected", "fdp_hat_0", "fdp_hat_lambda",
               "rejections_so_far")


class InputError(ValueError):
    pass


# -- argument parsing helpers ----------------------------------------------------

def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_stopping(text: Optional[str]) -> Optional[StoppingRule]:
    """``max-r=5,r-slope=1,max-stage=100,stage-slope=2``; a slope makes that cap adaptive."""
    if not text:
        return None
    vals = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in ("max-r", "r-slope", "max-stage", "stage-slope"):
            raise InputError(f"bad stopping term {part!r}; use max-r, r-slope, max-stage, stage-slope")
        try:
            vals[key] = float(value)
        except ValueError:
            raise InputError(f"stopping value for {key} is not a number: {value!r}") from None
    kwargs = {}
    for cap, slope, fixed_name, adaptive_name in (("max-r", "r-slope", "max_rejections",
                                                   "adaptive_max_rejections"),
                                                  ("max-stage", "stage-slope", "max_stage",
                                                   "adaptive_max_stage")):
        if slope in vals:
            if vals[slope] < 0:
                raise InputError(f"{slope} must be nonnegative")
            kwargs[adaptive_name] = AffineCap(vals.get(cap, 0.0), vals[slope])
        elif cap in vals:
            kwargs[fixed_name] = vals[cap]
    return StoppingRule(**kwargs)


def _config(args, schedule: Optional[ScheduleSpec] = None) -> ProcedureConfig:
    pi = args.pi[0] if len(args.pi) == 1 else tuple(args.pi)
    lam_seq = None if len(args.lam) == 1 else tuple(args.lam)
    return ProcedureConfig(level=args.level, spend_fraction=pi, lam=args.lam[0],
                           lambda_sequence=lam_seq, schedule=schedule,
                           stopping=parse_stopping(args.stopping))


# -- run ---------------------------------------------------------------------------

def read_run_input(fh) -> dict:
    """Parse the p-value CSV; raises :class:`InputError` with a line number."""
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        return {"p": [], "batch": None, "spec_time": None, "is_null": None}
    fields = [f.strip() for f in reader.fieldnames]
    reader.fieldnames = fields
    if "p" not in fields:
        raise InputError("line 1: missing required column 'p'")
    cols = {k: [] for k in ("p", "batch", "spec_time", "is_null")}
    for row in reader:
        line = reader.line_num
        if None in row or any(v is None for v in row.values()):
            raise InputError(f"line {line}: wrong number of fields")
        try:
            p = float(row["p"])
        except ValueError:
            raise InputError(f"line {line}: p is not a number: {row['p']!r}") from None
        if not (0.0 < p <= 1.0):
            raise InputError(f"line {line}: p must lie in (0, 1], got {row['p']}")
        cols["p"].append(p)
        for key in ("batch", "spec_time"):
            if key in fields:
                try:
                    cols[key].append(int(row[key]))
                except ValueError:
                    raise InputError(f"line {line}: {key} is not an integer: {row[key]!r}") from None
        if "is_null" in fields:
            v = row["is_null"].strip().lower()
            if v not in ("0", "1", "true", "false"):
                raise InputError(f"line {line}: is_null must be 0/1/true/false, got {row['is_null']!r}")
            cols["is_null"].append(v in ("1", "true"))
    return {k: (v if k == "p" or k in fields else None) for k, v in cols.items()}


def _schedule_from(data: dict, args, n: int) -> Optional[ScheduleSpec]:
    if not args.procedure.startswith("planned"):
        return None
    try:
        if data["spec_time"] is not None:
            return ScheduleSpec(tuple(data["spec_time"]))
        if data["batch"] is not None:
            return ScheduleSpec.from_batches(data["batch"])
    except ValueError as exc:
        raise InputError(f"invalid schedule: {exc}") from None
    if args.n_batch:
        return batch_schedule(n, args.n_batch)
    return None


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else format_float(x)


def cmd_run(args) -> int:
    try:
        if args.input == "-":
            data = read_run_input(sys.stdin)
        else:
            with open(args.input, newline="", encoding="utf-8") as fh:
                data = read_run_input(fh)
        n = len(data["p"])
        config = _config(args, _schedule_from(data, args, n))
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if supports_kernels(config):
            state = run_streams(args.procedure, np.array(data["p"]), config).to_state(
                is_null=data["is_null"], batch=data["batch"])
        else:
            state = run_reference(args.procedure, data["p"], config, is_null=data["is_null"],
                                  batch=data["batch"])
        audit_running_sums(state)
        # cumulative-sum rounding grows with the stream length
        tol = CONSTRAINT_TOL * max(1.0, len(state) / 1000)
        if not audit_constraints(state, family(args.procedure), tol=tol):
            raise InvariantError("FDP estimate exceeded the target level")
    except InvariantError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    recs = state.records
    alpha = np.array([r.alpha for r in recs])
    rejected = np.array([r.rejected for r in recs], dtype=bool)
    f0 = fdp_hat_0_path(alpha, rejected)
    if family(args.procedure) == "saffron":
        p = np.array([r.p for r in recs])
        fl = fdp_hat_lambda_path(p, alpha, np.array([r.lam for r in recs], dtype=np.float64), rejected)
    else:
        fl = np.full(len(recs), np.nan)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for k, (rec, R) in enumerate(zip(recs, np.cumsum(rejected))):
        w.writerow([rec.index, format_float(rec.p), format_float(rec.alpha), _fmt(rec.lam),
                    int(rec.rejected), format_float(f0[k]), _fmt(float(fl[k])), int(R)])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def _emit(text: str, path: Optional[str]) -> None:
    if path and path != "-":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- simulate ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    grid = FULL_GRID if args.full_grid else DESK_GRID
    try:
        procs = args.procedures or ["lord", "saffron"]
        for p in procs:
            if p not in GRID_PROCEDURES:
                raise InputError(f"unknown grid procedure {p!r}; choose from {sorted(GRID_PROCEDURES)}")
        if args.iterations < 2:
            raise InputError("iterations must be at least 2")
        if args.jobs < 1:
            raise InputError("jobs must be at least 1")
        scenarios = grid_scenarios(
            n_batch=args.n_batch or grid["n_batch"], rho=args.rho or grid["rho"],
            pi1=args.pi1 or grid["pi1"], t_max=args.t_max, mu_alt=args.mu_alt,
            iterations=args.iterations, master_seed=args.seed, level=args.level,
            lam=args.lam[0], null_assignment=args.null_assignment,
            spend_fraction=None if args.pi is None else args.pi[0],
        )
        stopping = parse_stopping(args.stopping)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    start = time.perf_counter()
    try:
        rows = run_grid(scenarios, procs, stopping=stopping, jobs=args.jobs)
    except InvariantError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    text = results_to_csv(rows)
    _emit(text, args.output)
    if args.figure:
        if not args.output or args.output == "-":
            print("error: --figure needs --output (the figure is drawn from the CSV)", file=sys.stderr)
            return EXIT_INPUT
        plot_results(args.output, args.figure, level=args.level)
    worst = max(r["fdr"] - args.level - 2 * r["mcse"] for r in rows)
    print(f"{len(rows)} cells in {time.perf_counter() - start:.2f}s; "
          f"max(fdr - level - 2*mcse) = {worst:.4f}", file=sys.stderr)
    return EXIT_OK


# -- verify ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    try:
        schedule = None
        if args.procedure.startswith("planned") and args.n_batch:
            schedule = batch_schedule(args.length, args.n_batch)
        base = _config(args, schedule)
        procedure, config, negative = resolve_named(args.procedure, args.length, base)
        if args.stopping and args.procedure != "nonmono-strawman":
            config = replace(config, stopping=parse_stopping(args.stopping))
        if args.trials < 1 or args.length < 1:
            raise InputError("trials and length must be positive")
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = check_condition_1(procedure, config, trials=args.trials, length=args.length,
                               seed=args.seed, minimize=not args.no_minimize)
    report.procedure = args.procedure
    print(report.summary())
    expect = args.expect_violations or negative
    if expect:
        return EXIT_OK if report.violations else EXIT_EXPECTATION
    return EXIT_OK if report.violations == 0 else EXIT_EXPECTATION


# -- entry point ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, pi_default: Optional[str] = "0.1") -> None:
    p.add_argument("--level", type=float, default=0.05, help="target FDR level alpha")
    p.add_argument("--pi", type=_floats, default=None if pi_default is None else _floats(pi_default),
                   help="spend fraction, or a comma list indexed by specification time")
    p.add_argument("--lam", type=_floats, default=[0.5],
                   help="SAFFRON candidate threshold, or a comma list lambda_1..lambda_n")
    p.add_argument("--stopping", default=None,
                   help="stopping caps, e.g. max-r=5 or max-r=2,r-slope=1,max-stage=200")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onlinefdr", description="Online FDR control toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="apply a procedure to a CSV of p-values")
    run.add_argument("procedure", choices=PROCEDURES)
    run.add_argument("input", help="CSV with a p column (optional batch, spec_time, is_null); - for stdin")
    run.add_argument("-o", "--output", help="decisions CSV (default stdout)")
    run.add_argument("--n-batch", type=int, default=None,
                     help="planned rules: batch size when the input has no schedule columns")
    _common(run)
    run.set_defaults(func=cmd_run)

    sim = sub.add_parser("simulate", help="run the Monte Carlo grid")
    sim.add_argument("--iterations", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--full-grid", action="store_true", help="1000-iteration-scale grid values")
    sim.add_argument("--n-batch", type=_ints, default=None)
    sim.add_argument("--rho", type=_floats, default=None)
    sim.add_argument("--pi1", type=_floats, default=None)
    sim.add_argument("--t-max", type=int, default=500)
    sim.add_argument("--mu-alt", type=float, default=3.0)
    sim.add_argument("--procedures", type=lambda s: s.split(","), default=None,
                     help=f"comma list from {sorted(GRID_PROCEDURES)}")
    sim.add_argument("--null-assignment", choices=("bernoulli", "exact"), default="bernoulli")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("-o", "--output", help="results CSV (default stdout)")
    sim.add_argument("--figure", help="SVG path for the FDR figure")
    _common(sim, pi_default=None)
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="perturbation audit of relaxed monotonicity")
    ver.add_argument("procedure", help=f"one of {', '.join(PROCEDURES)} or nonmono-strawman")
    ver.add_argument("--trials", type=int, default=1000)
    ver.add_argument("--length", type=int, default=100)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--n-batch", type=int, default=None, help="planned rules: batch schedule")
    ver.add_argument("--expect-violations", action="store_true",
                     help="negative control: succeed only if violations are found")
    ver.add_argument("--no-minimize", action="store_true")
    _common(ver)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "simulate" and args.pi is not None and len(args.pi) != 1:
        print("error: simulate takes a single --pi", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
