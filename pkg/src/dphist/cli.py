"""Command line entry point: gen-data, run, evaluate, compare.

Exit codes: 0 success, 2 usage errors, 3 budget/guard/configuration
violations.  ``--seed`` falls back to the DPH_SEED environment variable,
then 0; identical flags and seed reproduce identical output bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .core import (
    BudgetExceededError,
    ConfigurationError,
    Histogram,
    read_histogram_csv,
    write_histogram_csv,
)
from .evaluation import (
    ExperimentSpec,
    SyntheticKind,
    SyntheticSpec,
    generate,
    mse_experiment,
    summarize,
    timing_experiment,
    write_summary_json,
    write_trials_csv,
)
from .grouping import ErrorMetric
from .schemes import SchemeConfig, SchemeKind, SizeGuardError, run_scheme

_SCHEME_NAMES = ", ".join(k.value for k in SchemeKind)


def _default_seed() -> int:
    env = os.environ.get("DPH_SEED")
    return int(env) if env else 0


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset CSV (header label,value)")
    src.add_argument(
        "--kind",
        default=None,
        help="synthetic kind: smooth-sparse | spiky-periodic | uniform-random",
    )
    p.add_argument("--n", type=int, default=None, help="synthetic bin count")
    p.add_argument("--data-seed", type=int, default=None,
                   help="synthetic generator seed (defaults to --seed)")


def _load_histogram(args) -> Histogram:
    if args.data:
        return read_histogram_csv(args.data)
    if args.n is None:
        raise ConfigurationError("need --data FILE or --n N (with optional --kind)")
    kind = SyntheticKind.parse(args.kind) if args.kind else SyntheticKind.UNIFORM_RANDOM
    seed = args.data_seed if args.data_seed is not None else args.seed
    return generate(SyntheticSpec(kind, args.n, seed=seed))


def _parse_schemes(text: str) -> tuple[SchemeKind, ...]:
    names = [s for s in text.split(",") if s.strip()]
    if not names:
        raise ConfigurationError(f"empty scheme list; choose from: {_SCHEME_NAMES}")
    return tuple(SchemeKind.parse(s) for s in names)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=1.0, help="privacy budget")
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="master seed (env DPH_SEED as fallback)")
    p.add_argument("--fanout", type=int, default=16)
    p.add_argument("--allocation", choices=["geometric", "uniform"], default="geometric")
    p.add_argument("--metric", choices=["absolute", "squared"], default=None,
                   help="error metric override for sub/dawa/sps")
    p.add_argument("--fq-strategy", choices=["hierarchical", "identity"],
                   default="hierarchical")
    p.add_argument("--force", action="store_true",
                   help="override the DAWA_LIKE input-size guard")


def _metric(args) -> ErrorMetric | None:
    return ErrorMetric(args.metric) if args.metric else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dphist",
        description="differentially private histograms for range-sum queries",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--kind", required=True,
                   help="smooth-sparse | spiky-periodic | uniform-random")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("run", help="build one scheme's private structure")
    _add_dataset_args(p)
    p.add_argument("--scheme", required=True, help=f"one of: {_SCHEME_NAMES}")
    _add_common_flags(p)
    p.add_argument("-o", "--output", default=None, help="JSON path (default stdout)")

    p = sub.add_parser("evaluate", help="MSE experiment over random range queries")
    _add_dataset_args(p)
    p.add_argument("--schemes", required=True, help="comma list, e.g. lpa,h,sub,sps")
    p.add_argument("--range", type=float, default=0.3, dest="range_fraction",
                   help="query cardinality as a fraction of n (0.1..0.5)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--queries", type=int, default=2000)
    _add_common_flags(p)
    p.add_argument("-o", "--output", default="results",
                   help="prefix for <prefix>.csv and <prefix>.json")

    p = sub.add_parser("compare", help="utility-versus-time tradeoff table")
    _add_dataset_args(p)
    p.add_argument("--schemes", required=True)
    p.add_argument("--range", type=float, default=0.3, dest="range_fraction")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--queries", type=int, default=500)
    p.add_argument("--size-fractions", default="1.0",
                   help="comma list of prefix fractions for the timing sweep")
    _add_common_flags(p)
    p.add_argument("-o", "--output", default="compare",
                   help="prefix for <prefix>.csv and <prefix>.json")

    return parser


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(SyntheticKind.parse(args.kind), args.n, seed=args.seed)
    write_histogram_csv(generate(spec), args.output)
    return 0


def _cmd_run(args) -> int:
    h = _load_histogram(args)
    cfg = SchemeConfig(
        SchemeKind.parse(args.scheme),
        eps=args.eps,
        seed=args.seed,
        fanout=args.fanout,
        allocation=args.allocation,
        metric=_metric(args),
        fq_strategy=args.fq_strategy,
        force=args.force,
    )
    structure = run_scheme(h, cfg)
    text = json.dumps(structure.to_dict(), indent=2, sort_keys=True, allow_nan=False)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _experiment_spec(args, h: Histogram) -> ExperimentSpec:
    return ExperimentSpec(
        histogram=h,
        schemes=_parse_schemes(args.schemes),
        eps=args.eps,
        range_fraction=args.range_fraction,
        trials=args.trials,
        queries_per_trial=args.queries,
        seed=args.seed,
        fanout=args.fanout,
        allocation=args.allocation,
        metric=_metric(args),
        fq_strategy=args.fq_strategy,
        force=args.force,
    )


def _cmd_evaluate(args) -> int:
    h = _load_histogram(args)
    rows = mse_experiment(_experiment_spec(args, h))
    summary = summarize(rows)
    write_trials_csv(rows, f"{args.output}.csv")
    write_summary_json(
        summary, f"{args.output}.json",
        extra={"n": h.n, "eps": args.eps, "range_fraction": args.range_fraction,
               "trials": args.trials, "queries": args.queries, "seed": args.seed},
    )
    for scheme, stats in summary.items():
        print(f"{scheme:9s} median_mse={stats['median_mse']!r} "
              f"mean_build_ms={stats['mean_build_ms']!r} ok={stats['trials_ok']}")
    return 0


def _cmd_compare(args) -> int:
    h = _load_histogram(args)
    rows = mse_experiment(_experiment_spec(args, h))
    summary = summarize(rows)
    fractions = tuple(float(x) for x in args.size_fractions.split(",") if x.strip())
    timing = timing_experiment(
        h, _parse_schemes(args.schemes), fractions,
        eps=args.eps, seed=args.seed, fanout=args.fanout, force=args.force,
    )
    import csv as _csv

    with open(f"{args.output}.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["scheme", "median_mse", "mean_build_ms", "status"])
        for kind in _parse_schemes(args.schemes):
            stats = summary.get(kind.value, {})
            status = "ok" if stats.get("trials_ok") else ("skipped" if stats.get("skipped") else "error")
            writer.writerow([kind.value, repr(stats.get("median_mse")),
                             repr(stats.get("mean_build_ms")), status])
    write_summary_json(
        summary, f"{args.output}.json",
        extra={"timing": [vars(r) for r in timing], "n": h.n, "eps": args.eps,
               "range_fraction": args.range_fraction, "seed": args.seed},
    )
    print(f"{'scheme':9s} {'median_mse':>14s} {'build_ms':>10s}")
    for kind in _parse_schemes(args.schemes):
        stats = summary.get(kind.value, {})
        med = stats.get("median_mse")
        ms = stats.get("mean_build_ms")
        print(f"{kind.value:9s} {med if med is not None else 'n/a':>14} "
              f"{f'{ms:.2f}' if ms is not None else 'n/a':>10}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (BudgetExceededError, SizeGuardError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
