"""
Non-parametric popularity approximation.

The popularity log-weights zeta minimize the convex objective

    Phi(zeta) = (1/n) sum_i [tau * lse_j((K_ij - zeta_j) / tau) - K_ii] + mean(zeta)

whose minimizers form a line along the all-ones direction. The solver runs
gradient descent with Armijo backtracking and returns the mean-centered
representative. q_tilde' = exp(zeta / tau) then satisfies the popularity
fixed-point equation up to a common scale.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import pearsonr

from .similarity import SimilarityModel

logger = logging.getLogger(__name__)

MIN_TOL = 1e-13
ARMIJO_C = 1e-4
MIN_STEP = 1e-20
LOG_EVERY = 1000


class SolverError(ValueError):
    """Raised for invalid solver inputs."""
    pass


@dataclass(frozen=True)
class SimilarityMatrix:
    """Square matrix K[i, j] = E(x_i, y_j) together with its temperature."""
    K: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        K = np.asarray(self.K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
            raise SolverError(f"Similarity matrix must be square and non-empty, got {K.shape}")
        if not np.all(np.isfinite(K)):
            raise SolverError("Similarity matrix contains non-finite entries")
        if not self.tau > 0:
            raise SolverError(f"Temperature must be positive, got {self.tau}")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @classmethod
    def from_model(
        cls, model: SimilarityModel, anchors: np.ndarray, targets: np.ndarray, tau: float
    ) -> "SimilarityMatrix":
        return cls(model.similarity_matrix(anchors, targets), tau)

    @property
    def n(self) -> int:
        return int(self.K.shape[0])

    def scores(self, zeta: np.ndarray) -> np.ndarray:
        """(K_ij - zeta_j) / tau."""
        zeta = np.asarray(zeta, dtype=float)
        if zeta.shape != (self.n,):
            raise SolverError(f"zeta has shape {zeta.shape}, expected ({self.n},)")
        return (self.K - zeta[None, :]) / self.tau


@dataclass
class PopularitySolution:
    """Mean-centered minimizer of Phi and the run that produced it."""
    zeta: np.ndarray
    tau: float
    grad_norm: float
    iterations: int
    converged: bool
    objective: float
    trace: List[float] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return int(self.zeta.size)

    @property
    def qprime(self) -> np.ndarray:
        """q_tilde' = exp(zeta / tau), defined up to a positive scale."""
        return np.exp(self.zeta / self.tau)

    @property
    def log_qprime(self) -> np.ndarray:
        return self.zeta / self.tau


def phi_objective(zeta: np.ndarray, K: SimilarityMatrix) -> float:
    """
    Phi(zeta), stabilized with log-sum-exp.

    Phi is invariant under zeta -> zeta + c for any scalar c.
    """
    scores = K.scores(zeta)
    lse = logsumexp(scores, axis=1)
    return float(np.mean(K.tau * lse - np.diag(K.K)) + np.mean(zeta))


def phi_gradient(zeta: np.ndarray, K: SimilarityMatrix) -> np.ndarray:
    """dPhi/dzeta_j = (1/n)(1 - sum_i s_ij) with s the row softmax of the scores."""
    S = softmax(K.scores(zeta), axis=1)
    return (1.0 - S.sum(axis=0)) / K.n


def _phi_increment(S: np.ndarray, delta: np.ndarray, tau: float) -> float:
    # Phi(zeta + delta) - Phi(zeta) with S the softmax at zeta
    inner = S @ np.expm1(-delta / tau)
    return float(tau * np.mean(np.log1p(inner)) + np.mean(delta))


def solve_popularity(
    K: SimilarityMatrix,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    step: float = 1.0,
    zeta0: Optional[np.ndarray] = None,
) -> PopularitySolution:
    """
    Minimize Phi by gradient descent with Armijo backtracking.

    Each iteration tries twice the previously accepted step and halves it
    until the sufficient-decrease test holds; the first iteration starts
    from ``step``. The loop stops when the gradient infinity-norm reaches
    ``tol``. Running out of iterations, or a step shrinking below
    ``MIN_STEP``, returns the last (best) iterate flagged as not converged.

    Args:
        K: Similarity matrix
        tol: Gradient infinity-norm tolerance (at least 1e-13)
        max_iter: Maximum number of gradient iterations
        step: Initial trial step
        zeta0: Starting point (defaults to zeros)

    Returns:
        PopularitySolution with mean-centered zeta

    Raises:
        SolverError: If the arguments are out of range
    """
    if not tol >= MIN_TOL:
        raise SolverError(f"Tolerance must be at least {MIN_TOL}, got {tol}")
    if max_iter < 1:
        raise SolverError(f"max_iter must be at least 1, got {max_iter}")
    if not step > 0:
        raise SolverError(f"Initial step must be positive, got {step}")

    zeta = np.zeros(K.n) if zeta0 is None else np.array(zeta0, dtype=float)
    if zeta.shape != (K.n,):
        raise SolverError(f"zeta0 has shape {zeta.shape}, expected ({K.n},)")

    S = softmax(K.scores(zeta), axis=1)
    grad = (1.0 - S.sum(axis=0)) / K.n
    phi = phi_objective(zeta, K)
    trace = [phi]
    trial = step
    converged = False
    iterations = 0

    while True:
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            converged = True
            break
        if iterations >= max_iter:
            logger.warning(
                f"Popularity solver hit max_iter={max_iter} with |grad|={grad_norm:.3e} > {tol:.1e}"
            )
            break

        slope = float(grad @ grad)
        t = trial
        while True:
            delta = -t * grad
            decrease = _phi_increment(S, delta, K.tau)
            if decrease <= -ARMIJO_C * t * slope:
                break
            t *= 0.5
            if t < MIN_STEP:
                break
        if t < MIN_STEP:
            logger.warning(
                f"Line search stalled at iteration {iterations} with |grad|={grad_norm:.3e}"
            )
            break

        zeta = zeta + delta
        S = softmax(K.scores(zeta), axis=1)
        grad = (1.0 - S.sum(axis=0)) / K.n
        phi += decrease
        trace.append(phi)
        trial = 2.0 * t
        iterations += 1
        if iterations % LOG_EVERY == 0:
            logger.debug(f"iter {iterations}: phi={phi:.12g} |grad|={grad_norm:.3e} step={t:.3e}")

    zeta = zeta - zeta.mean()
    logger.debug(
        f"Popularity solver finished: n={K.n} iterations={iterations} "
        f"|grad|={grad_norm:.3e} converged={converged}"
    )
    return PopularitySolution(
        zeta=zeta,
        tau=K.tau,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=converged,
        objective=phi_objective(zeta, K),
        trace=trace,
    )


def _log_residual(log_q: np.ndarray, K: SimilarityMatrix) -> float:
    row = logsumexp(K.K / K.tau - log_q[None, :], axis=1)
    log_rhs = logsumexp(K.K / K.tau - row[:, None], axis=0)
    return float(np.max(np.abs(np.expm1(log_rhs - log_q))))


def fixed_point_residual(qbar: np.ndarray, K: SimilarityMatrix) -> float:
    """
    max_j |q_j - RHS_j(q)| / q_j for the popularity fixed-point equation

        RHS_j(q) = sum_j' exp(K_j'j / tau) / sum_i' exp(K_j'i' / tau) / q_i'

    The residual is unchanged when q is multiplied by a positive constant.
    """
    qbar = np.asarray(qbar, dtype=float)
    if qbar.shape != (K.n,):
        raise SolverError(f"Popularity vector has shape {qbar.shape}, expected ({K.n},)")
    if np.any(qbar <= 0) or not np.all(np.isfinite(qbar)):
        raise SolverError("Popularity vector must be positive and finite")
    return _log_residual(np.log(qbar), K)


def verify_fixed_point(solution: PopularitySolution, K: SimilarityMatrix) -> float:
    """Fixed-point residual of a solver solution, evaluated in the log domain."""
    if solution.n != K.n:
        raise SolverError(f"Solution has {solution.n} entries, matrix has {K.n}")
    return _log_residual(solution.log_qprime, K)


def normalize_scale(qprime: np.ndarray, q_true: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Align q_tilde' with the true popularity: Z = max(q_tilde') / max(q).

    Returns:
        (Z, q_tilde' / Z)
    """
    qprime = np.asarray(qprime, dtype=float)
    q_true = np.asarray(q_true, dtype=float)
    if qprime.shape != q_true.shape or qprime.ndim != 1:
        raise SolverError(f"Shape mismatch: {qprime.shape} vs {q_true.shape}")
    if np.any(qprime <= 0) or np.any(q_true <= 0):
        raise SolverError("Both popularity vectors must be positive")
    scale = float(np.max(qprime) / np.max(q_true))
    return scale, qprime / scale


def pearson_agreement(qtilde: np.ndarray, q_true: np.ndarray) -> float:
    """Pearson correlation between an approximation and the true popularity."""
    qtilde = np.asarray(qtilde, dtype=float)
    q_true = np.asarray(q_true, dtype=float)
    if qtilde.size < 2 or np.ptp(qtilde) == 0 or np.ptp(q_true) == 0:
        return float("nan")
    return float(pearsonr(qtilde, q_true)[0])
