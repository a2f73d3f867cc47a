"""Command-line interface: ``fedqq {plan,coverage,sweep,simulate,validate}``.

Results go to stdout (or ``--out``) as JSON or CSV; diagnostics go to
stderr.  Exit codes: 0 success (TRIVIAL plans included), 1 failed
self-validation, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .coverage import (
    QUANTITIES,
    coverage_law,
    fit_magnitude,
    fit_rates,
    log_grid,
    records_to_csv,
    sweep,
    SweepRecord,
)
from .errors import CapacityError, DomainError, NumericError, RankError
from .fed_sim import ScoreModel, replicate
from .planners import FederationShape, Method, Plan, make_plan

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

METHOD_NAMES = {
    "qqm": Method.QQM,
    "qqm-fast": Method.QQM_FAST,
    "qqc": Method.QQC,
    "qqc-fast": Method.QQC_FAST,
    "qqm-nj": Method.QQM_NJ,
    "qqc-nj": Method.QQC_NJ,
    "central-m": Method.CENTRAL_M,
    "central-c": Method.CENTRAL_C,
    "fedcp-avg": Method.FEDCP_AVG,
}


class UsageError(Exception):
    pass


def _method(name: str) -> Method:
    key = name.strip().lower().replace("_", "-")
    if key not in METHOD_NAMES:
        raise UsageError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
    return METHOD_NAMES[key]


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return v


def multinomial_sizes(m: int, N: int, seed: int) -> tuple:
    """Assign each of N points to one of m agents uniformly at random."""
    sizes = np.random.default_rng(seed).multinomial(N, [1.0 / m] * m)
    if np.any(sizes == 0):
        raise DomainError(f"seed {seed} left an agent without calibration data; pick another seed")
    return tuple(int(v) for v in sizes)


def shape_from_args(args) -> FederationShape:
    if args.sizes_from is not None:
        if args.m is None or args.N is None:
            raise UsageError("--sizes-from multinomial needs -m and --N")
        if args.n is not None or args.sizes is not None:
            raise UsageError("--sizes-from excludes -n and --sizes")
        seed = 0 if args.seed is None else args.seed
        ns = multinomial_sizes(args.m, args.N, seed)
        return FederationShape(args.m, ns, args.alpha, args.beta)
    if args.sizes is not None:
        if args.n is not None:
            raise UsageError("-n and --sizes are mutually exclusive")
        text = args.sizes
        if Path(text).is_file():
            text = Path(text).read_text()
        try:
            ns = tuple(int(v) for v in text.replace("\n", ",").split(",") if v.strip())
        except ValueError as exc:
            raise UsageError(f"bad --sizes list: {exc}") from exc
        if args.m is not None and args.m != len(ns):
            raise UsageError(f"-m {args.m} disagrees with {len(ns)} sizes")
        return FederationShape(len(ns), ns, args.alpha, args.beta)
    if args.m is None or args.n is None:
        raise UsageError("give -m and -n, or --sizes, or --sizes-from multinomial")
    return FederationShape.equal(args.m, args.n, args.alpha, args.beta)


def _emit(args, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _g(v) -> str:
    return f"{float(v):.12g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    shape = shape_from_args(args)
    plan = make_plan(_method(args.method), shape)
    if plan.is_trivial:
        _warn("no orders satisfy the guarantee; the prediction set is the whole label space")
    if args.format == "csv":
        pred = plan.predicted or {}
        row = [plan.method.value, plan.m, plan.ell if plan.ell is not None else "",
               plan.k if plan.k is not None else "", plan.r if plan.r is not None else "",
               plan.guarantee.value] + [_g(pred[key]) if key in pred else "" for key in ("mean", "q_lo", "q_hi")]
        _emit(args, "method,m,ell,k,r,guarantee,mean,q_lo,q_hi\n" + ",".join(map(str, row)))
    else:
        _emit(args, plan.to_json())
    return EXIT_OK


def _load_plan(args) -> Plan:
    if args.plan is not None:
        text = sys.stdin.read() if args.plan == "-" else Path(args.plan).read_text()
        return Plan.from_json(text)
    return make_plan(_method(args.method), shape_from_args(args))


def cmd_coverage(args) -> int:
    plan = _load_plan(args)
    law = coverage_law(plan)
    beta = plan.beta if args.beta_given is None else args.beta_given
    summ = law.summary(beta)
    table = None
    if args.cdf:
        lo, hi = law.quantile(1e-6), law.quantile(1 - 1e-6)
        if hi <= lo:
            lo, hi = 0.0, 1.0
        t = np.linspace(lo, hi, args.cdf)
        table = [[float(a), float(b)] for a, b in zip(t, np.atleast_1d(law.cdf(t)))]
    if args.format == "json":
        doc = {key: float(_g(v)) for key, v in summ.items()}
        doc["law"] = law.kind.value
        if table is not None:
            doc["cdf"] = [[float(_g(a)), float(_g(b))] for a, b in table]
        _emit(args, json.dumps(doc, indent=2))
    else:
        _emit(args, "mean,std,q_lo,q_hi\n" + ",".join(_g(summ[key]) for key in ("mean", "std", "q_lo", "q_hi")))
        if table is not None:
            if not args.cdf_out:
                raise UsageError("--cdf with CSV output needs --cdf-out (or use --format json)")
            Path(args.cdf_out).write_text("t,cdf\n" + "".join(f"{_g(a)},{_g(b)}\n" for a, b in table))
    return EXIT_OK


def _int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    methods = [_method(x) for x in args.methods.split(",")]
    unequal = args.sizes is not None or args.sizes_from is not None
    if unequal:
        shape = shape_from_args(args)
        records = []
        for method in methods:
            plan = make_plan(method, shape)
            n_label = shape.total // shape.m
            if plan.is_trivial:
                nan = float("nan")
                records.append(SweepRecord(method, shape.m, n_label, nan, nan, nan, trivial=True))
                continue
            law = coverage_law(plan)
            target = 1 - shape.alpha
            records.append(SweepRecord(method, shape.m, n_label, law.mean - target,
                                       law.quantile(shape.beta) - target,
                                       law.quantile(1 - shape.beta) - target))
    else:
        ms = _int_list(args.ms) if args.ms else ([args.m] if args.m else log_grid())
        ns = _int_list(args.ns) if args.ns else ([args.n] if args.n else log_grid())
        grid = [(m, n) for m in ms for n in ns]
        if not grid:
            raise UsageError("empty grid")
        records = sweep(methods, grid, args.alpha, args.beta)
    if all(r.trivial for r in records):
        _warn("every grid cell is TRIVIAL")
    fits = None
    if args.fit:
        fits = {}
        for method in methods:
            subset = [r for r in records if r.method is method]
            fits[method.value] = {}
            for q in QUANTITIES:
                try:
                    fits[method.value][q] = fit_rates(
                        subset, q, magnitude=fit_magnitude(method, q)).to_dict()
                except (DomainError, RankError) as exc:
                    fits[method.value][q] = {"error": str(exc)}
    if args.format == "json":
        doc = {"records": [
            {"method": r.method.value, "m": r.m, "n": r.n,
             "delta_E": None if r.trivial else r.delta_E,
             "delta_q_beta": None if r.trivial else r.delta_q_beta,
             "delta_q_1mbeta": None if r.trivial else r.delta_q_1mbeta,
             "trivial": r.trivial} for r in records]}
        if fits is not None:
            doc["fits"] = fits
        _emit(args, json.dumps(doc, indent=2))
    else:
        _emit(args, records_to_csv(records))
        if fits is not None:
            text = json.dumps(fits, indent=2) + "\n"
            if args.fit_out:
                Path(args.fit_out).write_text(text)
            else:
                raise UsageError("--fit with CSV output needs --fit-out (or use --format json)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.seed is None:
        raise UsageError("simulate needs --seed for reproducibility")
    shape = shape_from_args(args)
    text = args.model
    if text is None:
        text = '{"kind": "uniform"}'
    elif Path(text).is_file():
        text = Path(text).read_text()
    model = ScoreModel.from_json(text)
    plan = make_plan(_method(args.method), shape)
    if plan.is_trivial:
        _warn("TRIVIAL plan: every replication has coverage one")
    rep = replicate(shape, model, plan, args.R, n_test=args.n_test, seed=args.seed)
    if args.format == "json":
        _emit(args, json.dumps({"plan": plan.to_dict(), "summary": rep.summary}, indent=2))
    else:
        _emit(args, rep.to_csv())
        print(json.dumps(rep.summary), file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_checks

    try:
        report = run_checks(inject=args.inject_fault)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(args, json.dumps(report.to_dict(), indent=2))
    for f in report.failures:
        print(f"FAIL {f['invariant']} ({f['module']})", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=_unit_interval, default=0.1, help="miscoverage level")
    common.add_argument("--beta", type=_unit_interval, default=0.2, help="risk level for conditional guarantees")
    common.add_argument("-m", type=int, help="number of agents")
    common.add_argument("-n", type=int, help="calibration points per agent")
    common.add_argument("--sizes", help="comma-separated per-agent sizes, or a file holding them")
    common.add_argument("--sizes-from", choices=["multinomial"], help="draw sizes at random")
    common.add_argument("--N", type=int, help="total calibration points for --sizes-from")
    common.add_argument("--method", default="qqm", help="planner: " + ", ".join(METHOD_NAMES))
    common.add_argument("--out", help="write the result here instead of stdout")
    common.add_argument("--format", choices=["json", "csv"], default=None)
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--tol", type=float, default=None, help="quadrature tolerance override")

    parser = argparse.ArgumentParser(prog="fedqq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="choose quantile orders")
    p.set_defaults(func=cmd_plan, default_format="json")

    p = sub.add_parser("coverage", parents=[common], help="exact coverage law of a plan")
    p.add_argument("--plan", help="plan JSON file, or - for stdin (default: plan from the shape flags)")
    p.add_argument("--cdf", type=int, default=0, metavar="N", help="also tabulate the cdf at N points")
    p.add_argument("--cdf-out", help="file for the cdf table in CSV mode")
    p.set_defaults(func=cmd_coverage, default_format="csv")

    p = sub.add_parser("sweep", parents=[common], help="coverage excesses over an (m, n) grid")
    p.add_argument("--methods", default="qqm,qqm-fast,qqc,qqc-fast,central-m,central-c")
    p.add_argument("--ms", help="comma-separated m values (default: the log-spaced grid)")
    p.add_argument("--ns", help="comma-separated n values (default: the log-spaced grid)")
    p.add_argument("--fit", action="store_true", help="fit log-linear decay rates per method")
    p.add_argument("--fit-out", help="file for the rate-fit JSON in CSV mode")
    p.set_defaults(func=cmd_sweep, default_format="csv")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo replications of the protocol")
    p.add_argument("--model", help='score model JSON or file, e.g. {"kind": "uniform"}')
    p.add_argument("-R", type=int, default=1000, help="number of replications")
    p.add_argument("--n-test", type=int, default=0, help="test points per replication")
    p.set_defaults(func=cmd_simulate, default_format="csv")

    p = sub.add_parser("validate", help="run the fast self-checks")
    p.add_argument("--inject-fault", help="break a primitive on purpose (e.g. beta_cdf)")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json"], default="json")
    p.set_defaults(func=cmd_validate, default_format="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "format", None) is None:
        args.format = args.default_format
    # only an explicit --beta overrides the level stored in a plan file
    raw = sys.argv[1:] if argv is None else list(argv)
    args.beta_given = getattr(args, "beta", None) if any(a == "--beta" or a.startswith("--beta=") for a in raw) else None
    from . import planners

    saved_tol = planners.PLANNER_TOL
    if getattr(args, "tol", None) is not None:
        if not args.tol > 0:
            parser.error("--tol must be positive")
        planners.PLANNER_TOL = args.tol
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fedqq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, CapacityError, RankError) as exc:
        print(f"fedqq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"fedqq {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        planners.PLANNER_TOL = saved_tol


if __name__ == "__main__":
    sys.exit(main())
