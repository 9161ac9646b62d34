"""
Experiment harness behind the command-line tools.

Each ``cmd_*`` function takes a validated config, writes its outputs under
``config.output_dir`` and returns a CommandResult carrying the exit code.
Random streams are keyed by (seed, tags) through ``make_rng``:

    (seed, 0)             true-risk pairs of a sweep
    (seed, n, repeat)     the sample of one sweep cell
    (seed, 0..4)          toy world, splits, initialization, batches (training)

so every output is independent of worker count and evaluation order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from . import io
from .mis import (
    PopularityApprox,
    approximation_error_term,
    empirical_risk_from_matrix,
    estimator_variance_study,
    mle_exact_risk,
)
from .nuclr import BimodalWorld, train
from .popularity import (
    PopularitySolution,
    SimilarityMatrix,
    normalize_scale,
    pearson_agreement,
    solve_popularity,
    verify_fixed_point,
)
from .similarity import GroundTruthBilinear, LinearCosine, SimilarityKind, build_model
from .synthetic_world import PairedSample, estimate_true_risk, generate_sample, true_popularity
from ..models.config import (
    DEFAULT_TAU,
    ErrorTermConfig,
    ExperimentConfig,
    GenDataConfig,
    SolveConfig,
    SweepConfig,
    TrainConfig,
    VarianceStudyConfig,
)
from ..models.results import (
    ErrorTermRow,
    GenErrorRow,
    RiskMethod,
    SolveMetadata,
    VarianceRow,
)
from ..utils.rng import make_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3

RowT = TypeVar("RowT")


@dataclass
class CommandResult:
    """Outcome of one subcommand."""
    exit_code: int
    summary: str
    outputs: List[Path] = field(default_factory=list)


def _solve(
    sample: PairedSample, K: SimilarityMatrix, config: ExperimentConfig
) -> PopularitySolution:
    solution = solve_popularity(K, tol=config.tol, max_iter=config.max_iter, step=config.step)
    if not solution.converged:
        logger.warning(
            f"Solver did not converge for n={sample.n} seed={sample.seed}: "
            f"|grad|={solution.grad_norm:.3e}"
        )
    return solution


def _sweep_cell(config: ExperimentConfig, n: int, repeat: int):
    sample = generate_sample(n, config.tau, make_rng(config.seed, n, repeat), seed=config.seed)
    model = GroundTruthBilinear()
    K = SimilarityMatrix.from_model(model, sample.anchors, sample.targets, config.tau)
    solution = _solve(sample, K, config)
    q_true = true_popularity(sample)
    _, qtilde = normalize_scale(solution.qprime, q_true)
    return model, sample, K, solution, q_true, qtilde


def gen_error_rows(
    config: SweepConfig, n: int, repeat: int, true_risk: float
) -> List[GenErrorRow]:
    """The three generalization-error rows of one (n, repeat) cell."""
    model, sample, K, solution, _, qtilde = _sweep_cell(config, n, repeat)
    uniform = PopularityApprox.uniform(n, config.gcl_c)
    risks = [
        (RiskMethod.GCL, empirical_risk_from_matrix(K.K, uniform, config.tau), True),
        (RiskMethod.OURS, empirical_risk_from_matrix(K.K, qtilde, config.tau), solution.converged),
        (RiskMethod.MLE_EXACT, mle_exact_risk(model, sample, config.tau), True),
    ]
    return [
        GenErrorRow(
            n=n,
            repeat=repeat,
            method=method,
            empirical_risk=risk,
            true_risk=true_risk,
            abs_gen_error=abs(risk - true_risk),
            converged=converged,
        )
        for method, risk, converged in risks
    ]


def error_term_rows(config: ErrorTermConfig, n: int, repeat: int) -> List[ErrorTermRow]:
    """Error-term rows of one (n, repeat) cell, including the q_tilde = q control."""
    model, sample, _, solution, q_true, qtilde = _sweep_cell(config, n, repeat)
    terms = [
        (RiskMethod.GCL, PopularityApprox.uniform(n, config.gcl_c), True),
        (RiskMethod.OURS, qtilde, solution.converged),
        (RiskMethod.EXACT, q_true, True),
    ]
    return [
        ErrorTermRow(
            n=n,
            repeat=repeat,
            method=method,
            error_term=approximation_error_term(model, sample, approx, q_true, config.tau),
            converged=converged,
        )
        for method, approx, converged in terms
    ]


def _run_cells(
    task: Callable[..., List[RowT]],
    config: ExperimentConfig,
    extra: Tuple = (),
) -> List[RowT]:
    cells = [(n, r) for n in config.n_list for r in range(config.repeats)]
    rows: List[RowT] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(task, config, n, r, *extra) for n, r in cells]
            for future in futures:
                rows.extend(future.result())
    else:
        for n, r in cells:
            rows.extend(task(config, n, r, *extra))
    order = [m.value for m in RiskMethod]
    rows.sort(key=lambda row: (row.n, row.repeat, order.index(row.method)))
    return rows


def _log_means(rows: Sequence, value: str) -> None:
    for n in sorted({row.n for row in rows}):
        for method in dict.fromkeys(row.method for row in rows):
            values = [getattr(row, value) for row in rows if row.n == n and row.method == method]
            logger.info(f"✓ n={n:<5} {method:>9}: mean {value}={np.mean(values):.6g}")


def _exit_for(rows: Sequence) -> int:
    return EXIT_OK if all(row.converged for row in rows) else EXIT_NOT_CONVERGED


def cmd_gen_data(config: GenDataConfig) -> CommandResult:
    """Generate a synthetic paired dataset."""
    sample = generate_sample(config.n, config.tau, make_rng(config.seed), seed=config.seed)
    path = io.save_dataset(sample, Path(config.output_dir) / "dataset.csv", config.config_hash())
    logger.info(f"✓ Dataset written to {path}")
    outputs = [path, path.with_suffix(".json")]
    return CommandResult(EXIT_OK, f"n={config.n} seed={config.seed}", outputs)


def cmd_solve_popularity(config: SolveConfig) -> CommandResult:
    """
    Solve for the popularity weights of a dataset.

    Scale alignment and the Pearson diagnostic are reported when the data
    come from the synthetic world and the ground-truth model is used.
    """
    if config.dataset is not None:
        sample = io.load_dataset(config.dataset, config.tau)
    else:
        tau = config.tau if config.tau is not None else DEFAULT_TAU
        sample = generate_sample(config.n, tau, make_rng(config.seed), seed=config.seed)
    model = build_model(config.similarity, config.constant_value)
    K = SimilarityMatrix.from_model(model, sample.anchors, sample.targets, sample.tau)
    solution = solve_popularity(K, tol=config.tol, max_iter=config.max_iter, step=config.step)
    residual = verify_fixed_point(solution, K)

    scale_z = pearson = None
    if model.kind is SimilarityKind.GROUND_TRUTH_BILINEAR and sample.in_world():
        q_true = true_popularity(sample)
        scale_z, qtilde = normalize_scale(solution.qprime, q_true)
        pearson = pearson_agreement(qtilde, q_true)

    metadata = SolveMetadata(
        n=sample.n,
        tau=sample.tau,
        tol=config.tol,
        iterations=solution.iterations,
        grad_norm=solution.grad_norm,
        converged=solution.converged,
        residual=residual,
        scale_z=scale_z,
        pearson=pearson,
    )
    out = Path(config.output_dir)
    csv_path = io.save_solution(solution, out / "solution.csv", config.config_hash())
    json_path = io.write_json(out / "solution.json", metadata.model_dump(mode="json"))
    status = "converged" if solution.converged else "NOT converged"
    logger.info(
        f"✓ Popularity solved: n={sample.n} iterations={solution.iterations} "
        f"residual={residual:.3e} ({status})"
    )
    exit_code = EXIT_OK if solution.converged else EXIT_NOT_CONVERGED
    return CommandResult(
        exit_code,
        f"n={sample.n} iterations={solution.iterations} "
        f"grad_norm={solution.grad_norm:.3e} {status}",
        [csv_path, json_path],
    )


def cmd_gen_error_sweep(config: SweepConfig) -> CommandResult:
    """Generalization error of GCL, the solver approximation and exact MLE over n."""
    true_risk = estimate_true_risk(
        GroundTruthBilinear(), config.tau, config.n_true_risk, make_rng(config.seed, 0)
    )
    logger.info(f"✓ True risk L={true_risk:.10g} from {config.n_true_risk} pairs")
    rows = _run_cells(gen_error_rows, config, (true_risk,))
    _log_means(rows, "abs_gen_error")
    path = io.write_rows(Path(config.output_dir) / "gen_error.csv", rows, config.config_hash())
    return CommandResult(_exit_for(rows), f"{len(rows)} rows written to {path}", [path])


def cmd_error_term_sweep(config: ErrorTermConfig) -> CommandResult:
    """Approximation error term of the uniform, solver and exact approximations over n."""
    rows = _run_cells(error_term_rows, config)
    _log_means(rows, "error_term")
    path = io.write_rows(Path(config.output_dir) / "error_term.csv", rows, config.config_hash())
    return CommandResult(_exit_for(rows), f"{len(rows)} rows written to {path}", [path])


def cmd_variance_study(config: VarianceStudyConfig) -> CommandResult:
    """Mean and variance of the weighted MIS estimator per scheme and (n, m)."""
    records = estimator_variance_study(config)
    rows = [
        VarianceRow(
            scheme=r.scheme,
            n=r.n,
            m=r.m,
            repeats=r.repeats,
            mean=r.mean,
            variance=r.variance,
            exact=r.exact,
            abs_bias=r.abs_bias,
        )
        for r in records
    ]
    path = io.write_rows(Path(config.output_dir) / "variance.csv", rows, config.config_hash())
    return CommandResult(EXIT_OK, f"{len(rows)} rows written to {path}", [path])


def load_training_data(config: TrainConfig) -> Tuple[PairedSample, Optional[PairedSample]]:
    """User-supplied pairs, or train/eval splits of the toy bimodal world."""
    tau = config.nuclr.tau
    if config.dataset is not None:
        sample = io.load_dataset(config.dataset, tau)
        eval_sample = io.load_dataset(config.eval_dataset, tau) if config.eval_dataset else None
        return sample, eval_sample
    world = BimodalWorld.create(
        make_rng(config.seed, 0), config.latent_dim, config.data_dim, config.noise
    )
    return (
        world.sample(config.n_train, make_rng(config.seed, 1), tau),
        world.sample(config.n_eval, make_rng(config.seed, 2), tau),
    )


def cmd_train_nuclr(config: TrainConfig) -> CommandResult:
    """Train a two-encoder model with NUCLR (or SogCLR) and write metrics and a checkpoint."""
    sample, eval_sample = load_training_data(config)
    model = LinearCosine.initialize(
        sample.anchors.shape[1], sample.targets.shape[1], config.embed_dim, make_rng(config.seed, 3)
    )
    result = train(sample, model, config.nuclr, make_rng(config.seed, 4), eval_sample)
    out = Path(config.output_dir)
    config_hash = config.config_hash()
    outputs = [io.save_checkpoint(out / "checkpoint.json", result.model, result.state, config_hash)]
    if result.metrics:
        outputs.insert(0, io.write_rows(out / "metrics.csv", result.metrics, config_hash))
    final = result.metrics[-1].recall_at_1 if result.metrics else float("nan")
    return CommandResult(
        EXIT_OK, f"epochs={len(result.metrics)} final recall@1={final:.4f}", outputs
    )
