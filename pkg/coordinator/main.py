# cfmm command-line entry point
#
# Runs Monte-Carlo experiments, single debugging drops, and config validation.

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from coordinator.core.coordinator import Coordinator
from coordinator.harness.runner import build_spec, run_experiment, write_results
from shared.config import load_system_config, log_level, worker_count
from shared.errors import CfmmError, ConfigurationError
from shared.models import ExperimentKind, ExperimentSpec, Scheme, SystemConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EXPERIMENT_PRESETS = {"convergence": "convergence", "power": "power", "antenna": "antenna"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmm",
        description="User-centric cell-free mmWave downlink simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a Monte-Carlo experiment")
    run.add_argument(
        "--experiment",
        choices=["convergence", "power", "antenna", "custom"],
        required=True,
        help="Experiment preset (custom needs --sweep-field and --sweep-values)",
    )
    run.add_argument("--config", help="SystemConfig JSON file (defaults when omitted)")
    run.add_argument("--drops", type=int, help="Number of random drops")
    run.add_argument("--seed", type=int, help="Experiment seed (default: config rng_seed)")
    run.add_argument("--out", default="results.csv", help="Output path (default: results.csv)")
    run.add_argument("--format", choices=["csv", "json"], default="csv", help="Output format")
    run.add_argument("--workers", type=int, help="Concurrent drops (default: CFMM_WORKERS or 4)")
    run.add_argument("--sweep-field", help="Config field swept by a custom experiment")
    run.add_argument("--sweep-values", help="Comma-separated values for --sweep-field")
    run.add_argument(
        "--schemes",
        help="Comma-separated schemes (proposed, iabs_only, proposed_bs_zf)",
    )

    drop = sub.add_parser("drop", help="Simulate one drop and print its outcome as JSON")
    drop.add_argument("--config", help="SystemConfig JSON file (defaults when omitted)")
    drop.add_argument("--seed", type=int, help="Drop seed (default: config rng_seed)")
    drop.add_argument(
        "--scheme", choices=[s.value for s in Scheme], default=Scheme.PROPOSED.value
    )
    drop.add_argument("--dump-assignment", action="store_true", help="Include the beam map")
    drop.add_argument("--dump-trace", action="store_true", help="Include the WSMSE trace")

    validate = sub.add_parser("validate-config", help="Check a SystemConfig JSON file")
    validate.add_argument("file")

    return parser


def _load_config(path: Optional[str]) -> SystemConfig:
    return load_system_config(path) if path else SystemConfig()


def _split(values: Optional[str]) -> List[str]:
    return [v.strip() for v in values.split(",") if v.strip()] if values else []


def cmd_run(args: argparse.Namespace) -> int:
    base = _load_config(args.config)
    overrides = {}
    if args.schemes:
        overrides["schemes"] = _split(args.schemes)

    if args.experiment == "custom":
        if not args.sweep_field or not args.sweep_values:
            raise ConfigurationError("custom experiments need --sweep-field and --sweep-values")
        try:
            spec = ExperimentSpec(
                kind=ExperimentKind.CUSTOM,
                base=base,
                sweep_field=args.sweep_field,
                sweep_values=[float(v) for v in _split(args.sweep_values)],
                schemes=overrides.get("schemes", [Scheme.PROPOSED.value]),
                drops=args.drops or 1,
                seed=base.rng_seed if args.seed is None else args.seed,
            )
        except ValueError as e:
            raise ConfigurationError(f"Invalid custom experiment: {e}") from e
    else:
        spec = build_spec(
            EXPERIMENT_PRESETS[args.experiment], base, args.drops, args.seed, overrides
        )

    result = run_experiment(spec, args.workers or worker_count())
    path = write_results(result, args.out, args.format)
    print(f"Wrote {len(result.rows)} rows to {path}")
    return EXIT_OK


def cmd_drop(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    seed = cfg.rng_seed if args.seed is None else args.seed
    coordinator = Coordinator(cfg)
    coordinator.prepare_drop(np.random.default_rng(seed))
    outcome = coordinator.run_scheme(Scheme(args.scheme))

    summary = {
        "scheme": outcome.scheme.value,
        "seed": seed,
        "sum_rate": outcome.report.sum_rate,
        "rates": outcome.report.rate_bps_hz,
        "sinr": outcome.report.sinr,
        "flops": outcome.flops,
    }
    if outcome.state is not None:
        summary["iterations"] = outcome.state.iterations
        summary["converged"] = outcome.state.converged
    if args.dump_assignment:
        summary["assignment"] = outcome.assignment.model_dump(mode="json")
    if args.dump_trace:
        summary["trace"] = [step.model_dump() for step in outcome.trace]
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_system_config(args.file)
    print(f"✅ {args.file} is valid: L={cfg.num_aps}, K={cfg.num_ues}, N={cfg.num_antennas}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "drop": cmd_drop, "validate-config": cmd_validate}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, dispatch the subcommand and map failures to exit codes.

    Returns:
        int: 0 on success, 2 for configuration errors, 3 for runtime errors
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=log_level())

    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (CfmmError, OSError) as e:
        logger.error(f"Runtime error: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"Unexpected {type(e).__name__}: {e}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
