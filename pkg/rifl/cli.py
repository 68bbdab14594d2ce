"""Command line entry point: `rifl site-export | aggregate | simulate | tune`."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from rifl import env
from rifl.baselines import BaselineMethod
from rifl.causal import BasisConfig
from rifl.errors import (
    InvalidExperimentError,
    MajorityRuleUnverifiableError,
    NumericError,
    SchemaError,
)
from rifl.federated.coordinator import RunConfig, cmd_aggregate, tune
from rifl.federated.records import read_records
from rifl.federated.site import ExportConfig, ExportMode, cmd_site_export
from rifl.simulation.experiment import ExperimentConfig, run_experiment
from rifl.simulation.report import write_reports
from rifl.simulation.scenarios import Scenario, ScenarioKind
from rifl.sqlcache import ReplicationCache
from rifl.stats_kernel import Family
from rifl.structs import TuningConfig
from rifl.utils import format_number

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_EXPERIMENT = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError as e:
        msg = f"expected comma separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v)
    except ValueError as e:
        msg = f"expected comma separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _methods(text: str) -> tuple[BaselineMethod, ...]:
    try:
        return tuple(BaselineMethod(v.strip()) for v in text.split(",") if v.strip())
    except ValueError as e:
        choices = ", ".join(str(m) for m in BaselineMethod)
        msg = f"unknown method in {text!r}, choose from {choices}"
        raise argparse.ArgumentTypeError(msg) from e


def _add_tuning_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("tuning")
    group.add_argument("--alpha", type=float, default=0.05)
    group.add_argument("--nu", type=float, default=None, help="default: alpha / 20")
    group.add_argument("--resamples", type=int, default=500, metavar="M")
    group.add_argument("--prop", type=float, default=0.10)
    group.add_argument("--majority-fraction", type=float, default=0.5)
    group.add_argument("--seed", type=int, default=0)


def _tuning(args: argparse.Namespace) -> TuningConfig:
    return TuningConfig(
        alpha=args.alpha,
        nu=args.nu,
        resamples=args.resamples,
        prop=args.prop,
        majority_fraction=args.majority_fraction,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rifl",
        description="Robust inference for the prevailing model across sites.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    export = sub.add_parser("site-export", help="summarize local data into a record")
    export.add_argument("--data", type=Path, required=True)
    export.add_argument("--mode", choices=[str(m) for m in ExportMode], required=True)
    export.add_argument("--site-id", type=int, required=True)
    export.add_argument("--family", choices=[str(f) for f in Family], default=None)
    export.add_argument(
        "--coordinate",
        type=_int_list,
        default=(1,),
        help="1-based target coordinate(s), e.g. 1 or 1,2",
    )
    export.add_argument("--round", type=int, choices=(1, 2), default=1)
    export.add_argument("--peers", type=Path, default=None, help="round-1 records")
    export.add_argument("--target", type=Path, default=None, help="target covariates")
    export.add_argument(
        "--propensity-columns",
        type=_int_list,
        default=None,
        help="1-based covariates of the propensity model (ate), default all",
    )
    export.add_argument(
        "--local-only",
        action="store_true",
        help="export only the target summary (parametric)",
    )
    export.add_argument("--seed", type=int, default=0)
    export.add_argument("--out", type=Path, required=True)

    agg = sub.add_parser("aggregate", help="run RIFL over a directory of records")
    agg.add_argument("records", type=Path)
    agg.add_argument("--methods", type=_methods, default=())
    agg.add_argument("--out", type=Path, default=None)
    _add_tuning_flags(agg)

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("--kind", choices=[str(k) for k in ScenarioKind], required=True)
    sim.add_argument("--a", type=_float_list, default=(1.0,), help="separations")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--majority", type=int, default=6)
    sim.add_argument("--sites", type=int, default=10)
    sim.add_argument("--d", type=int, default=None)
    sim.add_argument("--coordinate", type=int, default=None)
    sim.add_argument("--methods", type=_methods, default=None)
    sim.add_argument("--out", type=Path, default=Path("results"))
    sim.add_argument(
        "--cache",
        action=argparse.BooleanOptionalAction,
        default=env._CACHE_ENABLED,
        help="reuse finished replications",
    )
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--no-progress", action="store_true")
    _add_tuning_flags(sim)

    tune_parser = sub.add_parser("tune", help="selected rho for several proportions")
    tune_parser.add_argument("records", type=Path)
    tune_parser.add_argument(
        "--props",
        type=_float_list,
        default=(0.05, 0.1, 0.2, 0.3, 0.4, 0.5),
    )
    _add_tuning_flags(tune_parser)
    return parser


def _site_export(args: argparse.Namespace) -> int:
    mode = ExportMode(args.mode)
    family = args.family or (
        Family.LINEAR if mode == ExportMode.HIGHDIM else Family.LOGISTIC
    )
    bases = None
    if args.propensity_columns is not None:
        bases = BasisConfig(propensity=tuple(c - 1 for c in args.propensity_columns))
    config = ExportConfig(
        mode=mode,
        site_id=args.site_id,
        family=family,
        coordinates=args.coordinate,
        seed=args.seed,
        round=args.round,
        local_only=args.local_only,
        bases=bases,
    )
    record = cmd_site_export(args.data, config, args.out, args.peers, args.target)
    print(f"site {record.site_id}: {record.mode} record (round {record.round}) -> {args.out}")
    return EXIT_OK


def _aggregate(args: argparse.Namespace) -> int:
    config = RunConfig(tuning=_tuning(args), seed=args.seed, methods=args.methods)
    analysis = cmd_aggregate(args.records, config, args.out)
    print(analysis.render())
    return EXIT_OK


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(tuning=_tuning(args))
    if args.methods:
        config = config.replace(methods=args.methods)
    return config


def _scenarios(args: argparse.Namespace) -> list[Scenario]:
    return [
        Scenario(
            kind=ScenarioKind(args.kind),
            n_sites=args.sites,
            majority_size=args.majority,
            n=args.n,
            d=args.d,
            separation=separation,
            replications=args.reps,
            seed=args.seed,
            coordinate=args.coordinate,
        )
        for separation in args.a
    ]


def _simulate(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    cache = ReplicationCache() if args.cache else None
    reports = []
    for scenario in _scenarios(args):
        reports.append(
            run_experiment(
                scenario,
                config,
                cache=cache,
                workers=args.workers,
                progress=not args.no_progress,
            ),
        )
    paths = write_reports(reports, args.out)
    for report in reports:
        for s in report.summaries:
            print(
                f"a={format_number(report.scenario.separation)} {s.method}: "
                f"coverage {s.coverage:.3f} (se {s.mc_se:.3f}), "
                f"length {s.avg_length:.4f}",
            )
    print("wrote " + ", ".join(str(p) for p in paths))
    for report in reports:
        report.raise_if_invalid()
    return EXIT_OK


def _tune(args: argparse.Namespace) -> int:
    config = RunConfig(tuning=_tuning(args), seed=args.seed)
    rows, err_n = tune(read_records(args.records), args.props, config)
    print("prop rho rule_met retained length")
    for row in rows:
        length = "-" if row.length is None else f"{row.length:.6g}"
        print(
            f"{row.prop:g} {row.rho:.6g} {str(row.rule_met).lower()} "
            f"{row.retained_count} {length}",
        )
    print(f"err_n = {err_n:.6g}")
    return EXIT_OK


_COMMANDS = {
    "site-export": _site_export,
    "aggregate": _aggregate,
    "simulate": _simulate,
    "tune": _tune,
}


def _log_level(verbose: int) -> int | str:
    if verbose >= 2:
        return logging.DEBUG
    if verbose == 1:
        return logging.INFO
    return env._LOG_LEVEL


def _check_flags(parser: argparse.ArgumentParser, args: argparse.Namespace):
    """Flag values that only the config dataclasses can reject are usage errors too."""
    try:
        if args.command == "simulate":
            _experiment_config(args)
            _scenarios(args)
        elif args.command in ("aggregate", "tune"):
            _tuning(args)
    except ValueError as e:
        parser.error(str(e))


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_flags(parser, args)
    logging.basicConfig(
        level=_log_level(args.verbose),
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except InvalidExperimentError as e:
        logging.error(str(e))
        return EXIT_INVALID_EXPERIMENT
    except MajorityRuleUnverifiableError as e:
        logging.error(f"{e} (diagnostics: {e.diagnostics})")
        return EXIT_FAILURE
    except (SchemaError, NumericError, ValueError, OSError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
