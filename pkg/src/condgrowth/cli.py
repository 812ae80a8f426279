"""Command-line driver.

Subcommands: ``fig1``, ``fit``, ``screen``, ``catchup``, ``simulate``.
Exit codes: 0 success, 1 runtime/model failure, 2 usage/validation failure.

Every subcommand accepts ``--seed``, ``--config`` and ``--out-dir``. A config
file holds flat ``key = value`` lines (``#`` starts a comment); keys are the
long flag names, and flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import (
    BSplineBasis,
    KnotVector,
    PenaltyConfig,
    Spline,
    advise_knot_count,
    design_matrix,
    make_knots,
)
from .catchup import CatchupModel, UnidentifiableError, estimate_b, is_catchup, midpoint_ages, simulate_cohort
from .data import (
    DataFormatError,
    atomic_write_text,
    csv_text,
    format_number,
    longitudinal_csv_text,
    read_longitudinal_csv,
)
from .fit import DEFAULT_LAMBDA_GRID, SingularSystemError, fit_quantile
from .growthchart import (
    DEFAULT_TAUS,
    ConditionalQuantileModel,
    MissingHeightError,
    RankDeficiencyError,
    build_conditional_design,
    default_basis,
    detect_crossings,
    fit_conditional_family,
    screen,
)
from .sim import Fig1Config, fit_fig1_replication, run_fig1_experiment, truth_fig1

__all__ = ["main", "build_parser", "read_models_csv", "models_csv_text", "read_spline_csv", "spline_csv_text"]


class UsageError(Exception):
    """Invalid flags, configuration or inputs (exit code 2)."""


_KEY_ALIASES = {"lambda": "lam"}


# -- argument types ---------------------------------------------------------

def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _tau_list(text: str) -> tuple[float, ...]:
    taus = _float_list(text)
    if any(not 0 < t < 1 for t in taus):
        raise argparse.ArgumentTypeError(f"quantile levels must lie in (0, 1): {text!r}")
    if len(set(taus)) != len(taus):
        raise argparse.ArgumentTypeError(f"duplicate quantile levels: {text!r}")
    return tuple(sorted(taus))


def _knots_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"knot count must be an integer or 'auto': {text!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError("knot count must be non-negative")
    return k


def _lambda_arg(text: str):
    if text == "gcv":
        return "gcv"
    try:
        lam = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"lambda must be a number or 'gcv': {text!r}") from None
    if not (lam >= 0 and math.isfinite(lam)):
        raise argparse.ArgumentTypeError("lambda must be finite and non-negative")
    return lam


def _nonneg_float(text: str) -> float:
    val = float(text)
    if not (val >= 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError(f"must be finite and non-negative: {text!r}")
    return val


def _pos_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text!r}")
    return val


def _probability(text: str) -> float:
    val = float(text)
    if not 0 < val < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return val


# -- serialization ----------------------------------------------------------

def _knots_field(basis: BSplineBasis) -> str:
    return ";".join(format_number(v) for v in basis.knots.augmented)


def _parse_knots_field(text: str) -> BSplineBasis:
    return BSplineBasis(KnotVector.from_augmented([float(v) for v in text.split(";")]))


def models_csv_text(models: Sequence[ConditionalQuantileModel]) -> str:
    m = models[0].basis.num_basis
    header = ["tau", "a", "b", "c", "transform", "knots"] + [f"g_{k}" for k in range(m)]
    rows = [
        [format_number(v) for v in (mod.tau, mod.a, mod.b, mod.c)]
        + [mod.transform, _knots_field(mod.basis)]
        + [format_number(v) for v in mod.g_coeffs]
        for mod in models
    ]
    return csv_text(header, rows)


def read_models_csv(path) -> list[ConditionalQuantileModel]:
    models = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:6] != ["tau", "a", "b", "c", "transform", "knots"]:
            raise DataFormatError(f"{path}: not a model file (header {fields[:6]})")
        g_cols = [f for f in fields[6:] if f.startswith("g_")]
        for lineno, row in enumerate(reader, start=2):
            try:
                basis = _parse_knots_field(row["knots"])
                models.append(
                    ConditionalQuantileModel(
                        tau=float(row["tau"]),
                        basis=basis,
                        g_coeffs=[float(row[c]) for c in g_cols if row[c] not in ("", None)],
                        a=float(row["a"]),
                        b=float(row["b"]),
                        c=float(row["c"]),
                        transform=row["transform"],
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not models:
        raise DataFormatError(f"{path}: no models")
    return models


def spline_csv_text(spline: Spline) -> str:
    header = ["knots"] + [f"c_{k}" for k in range(spline.basis.num_basis)]
    return csv_text(header, [[_knots_field(spline.basis)] + [format_number(v) for v in spline.coeffs]])


def read_spline_csv(path) -> Spline:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or not rows[0] or rows[0][0] != "knots":
        raise DataFormatError(f"{path}: expected a 'knots,c_0,...' header and one data row")
    try:
        basis = _parse_knots_field(rows[1][0])
        return Spline(basis, [float(v) for v in rows[1][1:]])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# -- subcommands ------------------------------------------------------------

def _out(args, name: str) -> Path:
    given = getattr(args, "output", None)
    return Path(given) if given else Path(args.out_dir) / name


def _read_input(path) -> "LongitudinalDataset":  # noqa: F821
    if path is None:
        raise UsageError("--input is required")
    if not Path(path).is_file():
        raise UsageError(f"input file not found: {path}")
    try:
        return read_longitudinal_csv(path)
    except DataFormatError as exc:
        raise UsageError(str(exc)) from None


def cmd_fig1(args) -> int:
    grid = DEFAULT_LAMBDA_GRID if args.lam == "gcv" else (args.lam,)
    try:
        config = Fig1Config(
            n=args.n,
            knots=args.knots,
            degree=args.degree,
            lambda_grid=tuple(float(v) for v in grid),
            seed=args.seed,
            replications=args.reps,
            noise_sd=args.noise_sd,
            penalty_order=args.penalty_order,
            ise_grid=args.grid_size,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_fig1_experiment(config)
    out_dir = Path(args.out_dir)
    atomic_write_text(
        out_dir / "fig1_report.csv",
        csv_text(
            ["rep", "ise_penalized", "ise_unpenalized", "lambda_star"],
            [
                [str(r.rep), format_number(r.ise_penalized), format_number(r.ise_unpenalized), format_number(r.lambda_star)]
                for r in report.replications
            ],
        ),
    )
    if not report.replications:
        print("every replication had a singular unpenalized fit", file=sys.stderr)
        return 1
    first = report.replications[0]
    x = np.linspace(0.0, 1.0, config.ise_grid)
    curves = np.column_stack([x, truth_fig1(x), first.penalized(x), first.unpenalized(x)])
    atomic_write_text(
        out_dir / "fig1_curves.csv",
        csv_text(["x", "truth", "penalized", "unpenalized"], [[format_number(v) for v in row] for row in curves]),
    )
    print(
        f"replications={len(report.replications)} excluded={len(report.excluded)} "
        f"penalized_wins={report.wins} median_ise_ratio={report.median_ratio:.6g}",
        file=sys.stderr,
    )
    return 0


def _age_basis(data, knots, placement: str) -> BSplineBasis:
    if knots == "auto" and placement == "equal_spacing":
        return default_basis(data)
    ages = data.ages()
    if len(ages) < 2:
        raise UsageError("need at least two measurements to span an age basis")
    n_rows = sum(max(len(s) - 1, 0) for s in data)
    k = advise_knot_count(max(n_rows, 1)) if knots == "auto" else knots
    try:
        return BSplineBasis(make_knots(min(ages), max(ages), k, placement, ages))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_fit(args) -> int:
    data = _read_input(args.input)
    if args.lam == "gcv":
        raise UsageError("--lambda gcv applies to least-squares fits; give a number for quantile fits")
    basis = _age_basis(data, args.knots, args.placement)
    penalty = PenaltyConfig(args.penalty_order, args.lam) if args.lam > 0 else None
    models = fit_conditional_family(data, args.tau, basis, args.transform, penalty)
    atomic_write_text(_out(args, "models.csv"), models_csv_text(models))
    design = build_conditional_design(data, basis, args.transform)
    queries = zip(design.t_prev, design.t, design.w_prev, design.h)
    crossings = detect_crossings(models, queries)
    for cr in crossings:
        sid, j = design.index[cr.query]
        print(
            f"crossing: subject {sid} visit {j}: q({cr.tau_low:g})={cr.q_low:.6g} > "
            f"q({cr.tau_high:g})={cr.q_high:.6g}",
            file=sys.stderr,
        )
    for mod in models:
        if not mod.fit.solver_report.converged:
            print(f"warning: tau={mod.tau:g} solver did not converge", file=sys.stderr)
    return 0


_QUERY_HEADER = ["t_prev", "t", "w_prev", "h", "w_observed"]


def cmd_screen(args) -> int:
    if args.models is None or not Path(args.models).is_file():
        raise UsageError(f"model file not found: {args.models}")
    if args.input is None or not Path(args.input).is_file():
        raise UsageError(f"query file not found: {args.input}")
    try:
        models = read_models_csv(args.models)
    except DataFormatError as exc:
        raise UsageError(str(exc)) from None
    if len(models) < 3:
        raise UsageError(f"screening needs at least 3 quantile levels, model file has {len(models)}")
    lo, hi = models[0].basis.domain
    with open(args.input, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != _QUERY_HEADER:
            raise UsageError(f"{args.input}: header must be exactly {','.join(_QUERY_HEADER)}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    out_rows = []
    n_ok = 0
    for row in rows:
        level, flag, error = "", "", ""
        try:
            t_prev, t, w_prev, h, w_obs = (float(v) for v in row)
        except ValueError:
            error = "invalid_number"
        else:
            if not t > t_prev:
                error = "nonincreasing_age"
            elif not lo <= t <= hi:
                error = "age_out_of_domain"
            else:
                res = screen(models, t_prev, t, w_prev, h, w_obs)
                level, flag = format_number(res.level), res.flag or ""
                n_ok += 1
        out_rows.append(list(row) + [level, flag, error])
    atomic_write_text(_out(args, "screen.csv"), csv_text(_QUERY_HEADER + ["level", "flag", "error"], out_rows))
    if rows and n_ok == 0:
        print("no query row could be screened", file=sys.stderr)
        return 1
    return 0


def estimate_g_median(data, knots="auto") -> Spline:
    """Median B-spline curve of weight on age, pooled over all measurements."""
    t = np.array(data.ages())
    w = np.array([m.w for s in data for m in s.measurements])
    if t.size < 2:
        raise UsageError("need at least two measurements to estimate g")
    k = advise_knot_count(t.size) if knots == "auto" else knots
    basis = BSplineBasis(make_knots(t.min(), t.max(), k))
    return Spline(basis, fit_quantile(design_matrix(basis, t), w, 0.5).coeffs)


def cmd_catchup(args) -> int:
    data = _read_input(args.input)
    if args.estimate_g == bool(args.g_file):
        raise UsageError("give exactly one of --g-file or --estimate-g")
    if args.g_file:
        if not Path(args.g_file).is_file():
            raise UsageError(f"g file not found: {args.g_file}")
        try:
            g = read_spline_csv(args.g_file)
        except DataFormatError as exc:
            raise UsageError(str(exc)) from None
    else:
        g = estimate_g_median(data, args.knots)
        atomic_write_text(Path(args.out_dir) / "g_estimated.csv", spline_csv_text(g))
    ages = data.ages()
    if ages and (min(ages) < g.domain[0] or max(ages) > g.domain[1]):
        raise UsageError(f"data ages leave the g domain {g.domain}")
    if args.mode == "scalar":
        est = estimate_b(data, g, None, args.noise_scaling)
        verdict = is_catchup(est, args.alpha)
        se = "" if est.standard_error is None else format_number(est.standard_error)
        text = csv_text(
            ["b_hat", "se", "n_transitions", "verdict"],
            [[format_number(est.b_hat), se, str(est.n_transitions), verdict]],
        )
        atomic_write_text(_out(args, "catchup.csv"), text)
        return 0
    mids = midpoint_ages(data)
    if mids.size == 0 or mids.min() == mids.max():
        raise UnidentifiableError("a spline b needs transitions at two or more midpoint ages")
    k = 3 if args.b_knots == "auto" else args.b_knots
    basis = BSplineBasis(make_knots(mids.min(), mids.max(), k))
    if args.lam == "gcv":
        raise UsageError("--lambda gcv is not supported for the catch-up spline; give a number")
    penalty = PenaltyConfig(args.penalty_order, args.lam) if args.lam > 0 else None
    est = estimate_b(data, g, basis, args.noise_scaling, penalty)
    b = est.b_hat
    header = ["knots", "n_transitions"] + [f"b_{i}" for i in range(basis.num_basis)]
    atomic_write_text(
        _out(args, "catchup.csv"),
        csv_text(header, [[_knots_field(basis), str(est.n_transitions)] + [format_number(v) for v in b.coeffs]]),
    )
    grid = np.linspace(*basis.domain, 101)
    atomic_write_text(
        Path(args.out_dir) / "catchup_curve.csv",
        csv_text(["t", "b"], [[format_number(x), format_number(v)] for x, v in zip(grid, b(grid))]),
    )
    return 0


def cmd_simulate(args) -> int:
    if args.times is not None:
        times = np.array(args.times)
    else:
        times = args.t0 + args.gap * np.arange(args.visits)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise UsageError("visit schedule must be non-negative and strictly increasing")
    if args.g_file:
        if not Path(args.g_file).is_file():
            raise UsageError(f"g file not found: {args.g_file}")
        try:
            g = read_spline_csv(args.g_file)
        except DataFormatError as exc:
            raise UsageError(str(exc)) from None
    else:
        hi = times[-1] if times.size > 1 else times[0] + 1.0
        g = Spline.linear(args.g_level, args.g_slope, BSplineBasis(KnotVector(times[0], hi, (), 3)))
    if times[0] < g.domain[0] or times[-1] > g.domain[1]:
        raise UsageError(f"visit schedule leaves the g domain {g.domain}")
    try:
        model = CatchupModel(g, args.b, args.sigma, args.noise_scaling)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    init = None if args.w0 is None else [args.w0] * args.subjects
    data = simulate_cohort(model, [times] * args.subjects, init, seed=args.seed)
    atomic_write_text(_out(args, "simulated.csv"), longitudinal_csv_text(data))
    atomic_write_text(Path(args.out_dir) / "g.csv", spline_csv_text(g))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    common.add_argument("--config", default=None, help="flat key = value configuration file")
    common.add_argument("--out-dir", default=".", help="directory for output files")

    parser = argparse.ArgumentParser(prog="condgrowth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("fig1", parents=[common], help="penalized vs unpenalized spline experiment")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--knots", type=int, default=40)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--penalty-order", type=int, default=2)
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="gcv")
    p.add_argument("--noise-sd", type=_nonneg_float, default=1.0)
    p.add_argument("--grid-size", type=int, default=2001)
    p.set_defaults(func=cmd_fig1)
    subs["fig1"] = p

    p = sub.add_parser("fit", parents=[common], help="fit conditional quantile growth models")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--tau", type=_tau_list, default=DEFAULT_TAUS)
    p.add_argument("--knots", type=_knots_arg, default="auto")
    p.add_argument("--placement", choices=["equal_spacing", "covariate_quantiles"], default="equal_spacing")
    p.add_argument("--transform", choices=["identity", "cube"], default="identity")
    p.add_argument("--penalty-order", type=_pos_int, default=2)
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default=0.0)
    p.set_defaults(func=cmd_fit)
    subs["fit"] = p

    p = sub.add_parser("screen", parents=[common], help="locate observed weights on a fitted chart")
    p.add_argument("--models")
    p.add_argument("--input")
    p.add_argument("--output")
    p.set_defaults(func=cmd_screen)
    subs["screen"] = p

    p = sub.add_parser("catchup", parents=[common], help="estimate the catch-up coefficient")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--g-file")
    p.add_argument("--estimate-g", action="store_true")
    p.add_argument("--knots", type=_knots_arg, default="auto", help="knots for an estimated g")
    p.add_argument("--mode", choices=["scalar", "spline"], default="scalar")
    p.add_argument("--b-knots", type=_knots_arg, default="auto")
    p.add_argument("--noise-scaling", choices=["linear_gap", "sqrt_gap"], default="linear_gap")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--penalty-order", type=_pos_int, default=2)
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default=0.0)
    p.set_defaults(func=cmd_catchup)
    subs["catchup"] = p

    p = sub.add_parser("simulate", parents=[common], help="simulate a cohort under catch-up dynamics")
    p.add_argument("--output")
    p.add_argument("--subjects", type=_pos_int, default=100)
    p.add_argument("--times", type=_float_list, default=None)
    p.add_argument("--visits", type=_pos_int, default=6)
    p.add_argument("--gap", type=float, default=1.0)
    p.add_argument("--t0", type=_nonneg_float, default=0.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--sigma", type=_nonneg_float, default=1.0)
    p.add_argument("--noise-scaling", choices=["linear_gap", "sqrt_gap"], default="linear_gap")
    p.add_argument("--w0", type=float, default=None, help="initial deviation from g for every subject")
    p.add_argument("--g-file")
    p.add_argument("--g-level", type=float, default=50.0)
    p.add_argument("--g-slope", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p
    return parser, subs


def read_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            values[_KEY_ALIASES.get(key, key)] = value
    return values


def _apply_config(sub: argparse.ArgumentParser, path) -> None:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    values = read_config(path)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown configuration key(s): {', '.join(unknown)}")
    defaults = {}
    for key, value in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{key}: expected a boolean, got {value!r}")
            defaults[key] = value.lower() in ("true", "1", "yes")
        else:
            defaults[key] = value  # argparse applies the flag's type to string defaults
    sub.set_defaults(**defaults)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if args.config:
            _apply_config(subs[args.command], args.config)
            try:
                args = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RankDeficiencyError, MissingHeightError, UnidentifiableError, SingularSystemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
