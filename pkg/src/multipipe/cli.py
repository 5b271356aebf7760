"""Command-line entry point: analyze, simulate, weights, plot.

Exit codes: 0 on success, 1 for usage problems, 2 for data problems
(malformed input, degenerate datasets), 3 for numerical failures.  Error
messages go to stderr with a machine-parsable ``ERROR[category]:`` prefix.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .errors import EXIT_CODE, MultipipeError, error_category
from .report import (
    analyze,
    load_report_jsonl,
    read_long_csv,
    render_saved_figures,
    write_report,
)
from .simulation import (
    ESTIMATOR_ORDER,
    SimConfig,
    build_scenario,
    large_sample_weights,
    run_study,
)

logger = logging.getLogger(__name__)

_SCENARIO_IDS = ("s1", "s2", "s3")


class _UsageError(Exception):
    """A flag combination argparse alone cannot reject."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR[usage]: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="multipipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pa = sub.add_parser("analyze", help="analyze a long-format CSV of per-pipeline outcomes")
    pa.add_argument("--input", required=True, help="CSV with subject,pipeline,value[,exposure]")
    pa.add_argument(
        "--mode", required=True, choices=("one-sample", "two-sample"), help="estimand"
    )
    pa.add_argument(
        "--reference",
        type=float,
        default=None,
        help="reference value subtracted in one-sample mode",
    )
    pa.add_argument("--alpha", type=float, default=0.05, help="test level (default 0.05)")
    pa.add_argument("--seed", type=int, default=0, help="integrator/bootstrap seed")
    pa.add_argument(
        "--bootstrap", type=int, default=200, help="bootstrap replicates (>= 100)"
    )
    pa.add_argument("--out-dir", default=".", help="directory for the report artifacts")
    pa.add_argument("--workers", type=int, default=1, help="parallel bootstrap workers")
    pa.set_defaults(func=_cmd_analyze)

    ps = sub.add_parser("simulate", help="run the Monte Carlo study and write a CSV")
    ps.add_argument(
        "--scenario", choices=_SCENARIO_IDS + ("all",), default="all", help="which scenario(s)"
    )
    ps.add_argument(
        "--n", type=int, nargs="+", default=[10], help="per-group sample size grid"
    )
    ps.add_argument(
        "--beta", type=float, nargs="+", default=[0.0], help="exposure effect grid"
    )
    ps.add_argument("--replicates", type=int, default=1000, help="replicates per cell")
    ps.add_argument("--seed", type=int, default=0, help="study seed")
    ps.add_argument("--alpha", type=float, default=0.05, help="test level")
    ps.add_argument("--out", default="simulation.csv", help="output CSV path")
    ps.add_argument("--workers", type=int, default=1, help="parallel replicate workers")
    ps.set_defaults(func=_cmd_simulate)

    pw = sub.add_parser("weights", help="print a scenario's large-sample weight table")
    pw.add_argument(
        "--scenario", required=True, choices=_SCENARIO_IDS + ("all",), help="scenario id"
    )
    pw.set_defaults(func=_cmd_weights)

    pp = sub.add_parser("plot", help="re-render figures from a saved report.jsonl")
    pp.add_argument("--report", required=True, help="path to report.jsonl")
    pp.add_argument("--out-dir", default=".", help="directory for the SVG files")
    pp.set_defaults(func=_cmd_plot)
    return parser


def _scenario_list(scenario: str) -> List[str]:
    return list(_SCENARIO_IDS) if scenario == "all" else [scenario]


def _cmd_analyze(args) -> int:
    if args.bootstrap < 100:
        raise _UsageError("--bootstrap must be at least 100")
    if args.workers < 1:
        raise _UsageError("--workers must be at least 1")
    mode = args.mode.replace("-", "_")
    if mode == "one_sample" and args.reference is None:
        raise _UsageError("--mode one-sample requires --reference")
    data = read_long_csv(args.input, mode, args.reference)
    report = analyze(
        data,
        mode,
        reference=args.reference,
        alpha=args.alpha,
        seed=args.seed,
        bootstrap=args.bootstrap,
        workers=args.workers,
        input_name=args.input,
    )
    for path in write_report(report, args.out_dir):
        print(path)
    return 0


def _cmd_simulate(args) -> int:
    if args.workers < 1:
        raise _UsageError("--workers must be at least 1")
    config = SimConfig(
        scenarios=tuple(build_scenario(s) for s in _scenario_list(args.scenario)),
        n_grid=tuple(args.n),
        betas=tuple(args.beta),
        replicates=args.replicates,
        seed=args.seed,
        alpha=args.alpha,
    )
    results = run_study(config, workers=args.workers)
    results.to_csv(args.out)
    print(args.out)
    for key in results.flagged:
        print(
            f"warning: cell {key} had {results.failures[key]} failed replicates",
            file=sys.stderr,
        )
    return 0


def _cmd_weights(args) -> int:
    for sid in _scenario_list(args.scenario):
        spec = build_scenario(sid)
        table = large_sample_weights(spec)
        print(f"scenario {spec.name} (J={spec.j}), weights in percent:")
        header = f"{'pipeline':<10}" + "".join(f"{name:>17}" for name in ESTIMATOR_ORDER)
        print(header)
        for idx in range(spec.j):
            cells = "".join(
                f"{100.0 * float(table[name][idx]):>17.2f}" for name in ESTIMATOR_ORDER
            )
            print(f"{'p' + format(idx + 1, '02d'):<10}{cells}")
    return 0


def _cmd_plot(args) -> int:
    import os

    saved = load_report_jsonl(args.report)
    heatmap, forest = render_saved_figures(saved)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = []
    for name, content in (("heatmap.svg", heatmap), ("forest.svg", forest)):
        path = os.path.join(args.out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        paths.append(path)
    for path in paths:
        print(path)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"ERROR[usage]: {exc}", file=sys.stderr)
        return 1
    except MultipipeError as exc:
        category = error_category(exc)
        print(f"ERROR[{category}]: {exc}", file=sys.stderr)
        return EXIT_CODE.get(category, 3)
    except OSError as exc:
        print(f"ERROR[data]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
