"""
dpmis command-line entry point.

Subcommands: gen-data, solve-popularity, gen-error-sweep, error-term-sweep,
variance-study, train-nuclr. Flags fill a pydantic config; values in a
``--config`` YAML/JSON file override them. Exit codes: 0 success,
2 configuration or input error, 3 numerical non-convergence.
"""

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import ValidationError

from ._version import __version__
from .core import bench
from .core.config import ConfigError, ConfigManager
from .core.io import DatasetError
from .core.mis import PopularityError, ZeroDensityError
from .core.nuclr import NuclrError
from .core.popularity import SolverError
from .core.similarity import DegenerateProjectionError, ModelError
from .core.synthetic_world import DomainError
from .models.config import (
    ErrorTermConfig,
    GenDataConfig,
    RuntimeSettings,
    SolveConfig,
    SweepConfig,
    TrainConfig,
    VarianceStudyConfig,
)
from .utils.logging import setup_logging

logger = logging.getLogger(__name__)

INPUT_ERRORS = (
    ConfigError,
    DatasetError,
    DomainError,
    ModelError,
    DegenerateProjectionError,
    PopularityError,
    ZeroDensityError,
    SolverError,
    NuclrError,
)

NUCLR_FLAGS = (
    "tau", "batch_size", "epochs", "gamma", "lr_w", "lr_zeta", "momentum_w", "momentum_zeta",
    "zeta0", "freeze_epochs", "schedule", "mode", "w_optimizer", "weight_decay",
    "learn_zeta", "use_xi", "sogclr",
)


def _grid_point(text: str) -> Tuple[int, int]:
    try:
        n, m = text.lower().split("x")
        return int(n), int(m)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Grid points look like 8x4 (n x m), got '{text}'")


def _flag(value: bool):
    return {"action": "store_const", "const": value}


def _add_sweep_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Run seed (required)")
    parser.add_argument("--tau", type=float, help="Temperature (default 0.2)")
    parser.add_argument("--n-list", dest="n_list", type=int, nargs="+", help="Sample sizes")
    parser.add_argument("--repeats", type=int, help="Samples per n (default 10)")
    parser.add_argument(
        "--n-true-risk", dest="n_true_risk", type=int, help="Pairs for the true risk"
    )
    parser.add_argument("--tol", type=float, help="Solver gradient tolerance (default 1e-10)")
    parser.add_argument("--max-iter", dest="max_iter", type=int, help="Solver iteration cap")
    parser.add_argument("--step", type=float, help="Initial Armijo step")
    parser.add_argument(
        "--gcl-c", dest="gcl_c", type=float, help="Uniform approximation constant c"
    )
    parser.add_argument("--workers", type=int, help="Worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpmis",
        description=(
            "Multiple importance sampling estimators, popularity solving and NUCLR training"
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--log-dir", dest="log_dir", help="Directory for rotating log files")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file overriding flag values")
    common.add_argument(
        "--output-dir", dest="output_dir", help="Output directory (default results)"
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--n", type=int, help="Number of pairs")
    p.add_argument("--tau", type=float, help="Temperature (default 0.2)")
    p.add_argument("--seed", type=int, help="Run seed (required)")

    p = sub.add_parser("solve-popularity", parents=[common], help="Solve for popularity weights")
    p.add_argument("--dataset", help="Dataset CSV from gen-data")
    p.add_argument("--n", type=int, help="Pairs to generate when no dataset is given")
    p.add_argument("--seed", type=int, help="Seed when generating data")
    p.add_argument("--tau", type=float, help="Temperature (default: dataset sidecar, else 0.2)")
    p.add_argument("--similarity", choices=["ground_truth_bilinear", "constant"])
    p.add_argument("--constant-value", dest="constant_value", type=float)
    p.add_argument("--tol", type=float, help="Gradient tolerance (default 1e-10)")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="Iteration cap")
    p.add_argument("--step", type=float, help="Initial Armijo step")

    p = sub.add_parser("gen-error-sweep", parents=[common], help="Generalization-error sweep")
    _add_sweep_flags(p)

    p = sub.add_parser("error-term-sweep", parents=[common], help="Approximation error-term sweep")
    _add_sweep_flags(p)

    p = sub.add_parser("variance-study", parents=[common], help="MIS estimator variance study")
    p.add_argument("--seed", type=int, help="Run seed (required)")
    p.add_argument("--tau", type=float, help="Temperature (default 0.2)")
    p.add_argument(
        "--grid", type=_grid_point, nargs="+", help="Grid points n x m, e.g. 8x1 32x1 8x4"
    )
    p.add_argument("--schemes", nargs="+", help="balance, uniform, single:<index>")
    p.add_argument("--repeats", type=int, help="Resamples per grid point (default 2000)")
    p.add_argument("--eval-anchor", dest="eval_anchor", type=float, nargs=2, help="Anchor x_i")

    p = sub.add_parser("train-nuclr", parents=[common], help="Train with NUCLR or SogCLR")
    p.add_argument("--seed", type=int, help="Run seed (required)")
    p.add_argument("--dataset", help="Paired CSV with x*/y* columns (toy data when omitted)")
    p.add_argument("--eval-dataset", dest="eval_dataset", help="Held-out paired CSV")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-eval", dest="n_eval", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="Embedding dimension")
    p.add_argument("--tau", type=float, help="Temperature (default 0.1)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--gamma", type=float, help="Moving-average weight (default 0.8)")
    p.add_argument("--lr-w", dest="lr_w", type=float)
    p.add_argument("--lr-zeta", dest="lr_zeta", type=float)
    p.add_argument("--momentum-w", dest="momentum_w", type=float)
    p.add_argument("--momentum-zeta", dest="momentum_zeta", type=float)
    p.add_argument("--zeta0", type=float, help="Initial zeta value")
    p.add_argument("--freeze-epochs", dest="freeze_epochs", type=int)
    p.add_argument("--schedule", choices=["constant", "cosine"])
    p.add_argument("--mode", choices=["unidirectional", "symmetric"])
    p.add_argument("--w-optimizer", dest="w_optimizer", choices=["momentum", "adamw"])
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--no-learn-zeta", dest="learn_zeta", **_flag(False))
    p.add_argument("--no-xi", dest="use_xi", **_flag(False))
    p.add_argument("--sogclr", **_flag(True), help="zeta frozen at 0 and xi = 0")

    return parser


COMMANDS: Dict[str, Tuple[type, Callable[[Any], bench.CommandResult]]] = {
    "gen-data": (GenDataConfig, bench.cmd_gen_data),
    "solve-popularity": (SolveConfig, bench.cmd_solve_popularity),
    "gen-error-sweep": (SweepConfig, bench.cmd_gen_error_sweep),
    "error-term-sweep": (ErrorTermConfig, bench.cmd_error_term_sweep),
    "variance-study": (VarianceStudyConfig, bench.cmd_variance_study),
    "train-nuclr": (TrainConfig, bench.cmd_train_nuclr),
}


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "config", "log_level", "log_dir"}
    values = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    if args.command == "train-nuclr":
        nuclr = {k: values.pop(k) for k in NUCLR_FLAGS if k in values}
        if nuclr:
            values["nuclr"] = nuclr
    return values


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = RuntimeSettings()
    except ValidationError as e:
        print(f"error: invalid DPMIS_* environment settings: {e}", file=sys.stderr)
        return bench.EXIT_CONFIG
    setup_logging(
        log_level=args.log_level or settings.log_level,
        log_dir=args.log_dir or settings.log_dir,
    )

    config_cls, command = COMMANDS[args.command]
    try:
        config = ConfigManager(args.config).build(config_cls, _overrides(args))
        result = command(config)
    except INPUT_ERRORS as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return bench.EXIT_CONFIG
    except OSError as e:
        logger.error(f"{args.command}: I/O failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return bench.EXIT_CONFIG

    print(result.summary)
    for path in result.outputs:
        print(path)
    if result.exit_code == bench.EXIT_NOT_CONVERGED:
        logger.warning(f"{args.command}: numerical non-convergence (exit {result.exit_code})")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
