"""
Command-line entry point.

Subcommands: ``analytic`` and ``mc`` for a single operating point, ``sweep``
for a configuration file, ``preset`` for the bundled figure presets and
``validate`` for the sampler checks.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 failed
validation gate.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from uwqkd import __version__
from uwqkd.config import ExperimentConfig, load_preset, parse_config, preset_names, validate_config
from uwqkd.errors import (
    ConfigError,
    DomainError,
    EnumerationBudgetError,
    NumericError,
    UnsupportedConfigurationError,
)
from uwqkd.montecarlo import MAX_SEED, validate_pmf
from uwqkd.serializers import emit_csv, emit_notes
from uwqkd.settings import Settings
from uwqkd.source import SourceParams

logger = logging.getLogger("uwqkd")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GATE = 4

# (S, N) points of the count-sampler check
VALIDATION_GRID = [(0.0, 0.001), (0.5, 0.001), (2.0, 0.001), (0.5, 0.1), (5.0, 0.5), (2.0, 1.0)]


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=_u64, default=None, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--trials", type=_non_negative_int, default=None, help="Monte Carlo trials")
    parser.add_argument("--threads", type=_positive_int, default=1,
                        help="Worker processes; changes speed only, never results")


def _add_output_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--format", choices=("csv", "csv+svg"), default=None, help="Output artifacts")


def _add_point_flags(parser: argparse.ArgumentParser):
    water = parser.add_mutually_exclusive_group()
    water.add_argument("--water", default=None, help="Water preset (clear, coastal, pure, harbor)")
    water.add_argument("--c", dest="extinction_c", type=float, default=None, help="Extinction coefficient (1/m)")
    parser.add_argument("--d", type=float, default=20.0, help="Link distance (m)")
    parser.add_argument("--m", type=int, default=1, help="Number of virtually subtracted photons")
    parser.add_argument("--T", type=float, default=0.95, help="Filter transmittance")
    parser.add_argument("--zeta", type=float, default=0.85, help="Squeezing parameter")
    turbulence = parser.add_mutually_exclusive_group()
    turbulence.add_argument("--theta", type=int, default=None, help="Erlang shape")
    turbulence.add_argument("--sigma-x", type=float, default=None, help="Log-normal log-amplitude std")
    parser.add_argument("--lambda", dest="lambda_E", type=float, default=None, help="Erlang rate")
    parser.add_argument("--N", type=float, default=0.001, help="Thermal photon number")
    parser.add_argument("--delta", type=float, default=None, help="Fixed |delta|; optimized when omitted")
    parser.add_argument("--L", type=int, action="append", default=None, help="QMSD block length (repeatable)")
    parser.add_argument("--scheme", action="append", choices=("HD", "QMLD", "QMSD"), default=None,
                        help="Detection scheme (repeatable, default all)")
    parser.add_argument("--extrapolated", action="store_true", help="Allow values outside the studied ranges")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwqkd", description="Underwater CV-QKD QBER analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbosity", choices=("DEBUG", "INFO", "WARNING", "ERROR"), default="INFO")
    sub = parser.add_subparsers(dest="cmd", required=True)

    analytic = sub.add_parser("analytic", help="Analytic QBER of every scheme at one point")
    _add_point_flags(analytic)

    mc = sub.add_parser("mc", help="Monte Carlo and analytic QBER at one point")
    _add_point_flags(mc)
    _add_run_flags(mc)

    sweep = sub.add_parser("sweep", help="Run the sweep of a YAML configuration")
    sweep.add_argument("config", type=str, help="Experiment configuration file")
    _add_run_flags(sweep)
    _add_output_flags(sweep)

    preset = sub.add_parser("preset", help="Run a bundled figure preset")
    preset.add_argument("name", choices=preset_names(), help="Bundled preset")
    preset.add_argument("--figure-scale", action="store_true",
                        help="Use the 3000-trial figure-scale count instead of the configured one")
    preset.add_argument("--show", action="store_true", help="Print the preset YAML and exit")
    _add_run_flags(preset)
    _add_output_flags(preset)

    validate = sub.add_parser("validate", help="Check the samplers against their exact laws")
    validate.add_argument("--samples", type=_positive_int, default=1_000_000, help="Draws per check")
    validate.add_argument("--seed", type=_u64, default=0)
    validate.add_argument("--T", type=float, default=0.95)
    validate.add_argument("--zeta", type=float, default=0.85)
    return parser


def point_config(args: argparse.Namespace, trials: int = 0, seed: int = 0) -> ExperimentConfig:
    """Single-point configuration assembled from command-line flags."""
    if args.sigma_x is not None:
        turbulence = {"sigma_X": args.sigma_x}
    else:
        theta = 3 if args.theta is None else args.theta
        turbulence = {"theta": theta, "lambda": float(theta) if args.lambda_E is None else args.lambda_E}
    channel = {"distances": [args.d], "turbulence": [turbulence]}
    if args.extinction_c is not None:
        channel["extinction_c"] = args.extinction_c
    else:
        channel["water"] = [args.water or "clear"]
    receiver = {"N": [args.N], "delta_mode": "optimize"}
    if args.delta is not None:
        receiver.update(delta_mode="fixed", delta=args.delta)
    data = {
        "name": args.cmd,
        "extrapolated": args.extrapolated,
        "source": {"T": args.T, "zeta": args.zeta, "m": [args.m]},
        "channel": channel,
        "receiver": receiver,
        "detection": {"schemes": args.scheme or ["HD", "QMLD", "QMSD"], "L": args.L or [4]},
        "mc": {"trials": trials, "seed": seed},
    }
    return validate_config(data, source="command line")


def _with_overrides(config: ExperimentConfig, args: argparse.Namespace, trials: Optional[int] = None) -> ExperimentConfig:
    mc = {}
    if getattr(args, "seed", None) is not None:
        mc["seed"] = args.seed
    if trials is not None:
        mc["trials"] = trials
    elif getattr(args, "trials", None) is not None:
        mc["trials"] = args.trials
    output = {}
    if getattr(args, "out", None) is not None:
        output["directory"] = args.out
    if getattr(args, "format", None) is not None:
        output["format"] = args.format
    return config.model_copy(
        update={
            "mc": config.mc.model_copy(update=mc),
            "output": config.output.model_copy(update=output),
        }
    )


def _print_rows(result):
    print(json.dumps([row.as_json() for row in result.rows], indent=2))


def _write_artifacts(config: ExperimentConfig, result) -> List[Path]:
    directory = Path(config.output.directory)
    written = [emit_csv(result, directory / f"{config.output.stem}.csv")]
    notes = emit_notes(result, directory / f"{config.output.stem}.notes.csv")
    if notes:
        written.append(notes)
    if config.output.format == "csv+svg":
        from uwqkd.plotting import emit_plot

        written.append(emit_plot(result, directory / f"{config.output.stem}.svg"))
    for path in written:
        logger.info("wrote %s", path)
    return written


def _run_config(config: ExperimentConfig, threads: int) -> int:
    from uwqkd.sweep import run_sweep

    result = run_sweep(config, threads=threads)
    for path in _write_artifacts(config, result):
        print(path)
    return 0


def cmd_analytic(args) -> int:
    from uwqkd.sweep import run_sweep

    _print_rows(run_sweep(point_config(args)))
    return 0


def cmd_mc(args) -> int:
    from uwqkd.sweep import run_sweep

    trials = Settings.get_mc_defaults().trials if args.trials is None else args.trials
    config = point_config(args, trials=trials, seed=args.seed or 0)
    _print_rows(run_sweep(config, threads=args.threads))
    return 0


def cmd_sweep(args) -> int:
    return _run_config(_with_overrides(parse_config(args.config), args), args.threads)


def cmd_preset(args) -> int:
    config = load_preset(args.name)
    if args.show:
        print(config.to_yaml(), end="")
        return 0
    trials = Settings.get_mc_defaults().figure_trials if args.figure_scale else None
    return _run_config(_with_overrides(config, args, trials=trials), args.threads)


def cmd_validate(args) -> int:
    reports = []
    for index, (S, N) in enumerate(VALIDATION_GRID):
        source = SourceParams(T=args.T, zeta=args.zeta, m=index % 4)
        report = validate_pmf(S, N, source, args.samples, seed=args.seed + index)
        reports.append((S, N, source.m, report))

    print(f"{'S':>6} {'N':>7} {'m':>2} {'TV':>10} {'KS':>10} {'P_acc emp':>11} {'P_acc':>11}  status")
    for S, N, m, r in reports:
        status = "ok" if r.passed else "FAIL " + ",".join(k for k, v in r.checks.items() if not v)
        print(
            f"{S:6g} {N:7g} {m:2d} {r.tv_distance:10.3e} {r.ks_statistic:10.3e} "
            f"{r.acceptance_rate:11.6f} {r.acceptance_expected:11.6f}  {status}"
        )
    return 0 if all(r.passed for *_, r in reports) else EXIT_GATE


COMMANDS = {
    "analytic": cmd_analytic,
    "mc": cmd_mc,
    "sweep": cmd_sweep,
    "preset": cmd_preset,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.verbosity),
        format="%(asctime)s [%(levelname)s] [%(name)s] %(message)s",
    )
    try:
        return COMMANDS[args.cmd](args)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (DomainError, UnsupportedConfigurationError, EnumerationBudgetError) as e:
        logger.error("invalid parameters: %s", e)
        return EXIT_CONFIG
    except NumericError as e:
        logger.error("numeric failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
