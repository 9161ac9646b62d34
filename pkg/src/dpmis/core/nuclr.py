"""
NUCLR: stochastic training of a similarity model with learned popularity.

Each step draws a minibatch B of pair indices and

1. estimates phi_i = sum_{j != i} exp((E_ij - E_ii - zeta_j) / tau) from
   the batch, scaled by (n - 1) / (B - 1),
2. folds the estimates into a per-anchor moving average u,
3. takes a heavy-ball step on zeta_j for j in B (skipped while zeta is frozen),
4. takes an optimizer step on the model parameters w,
5. raises xi to max(xi, |zeta|_inf).

Both gradients are evaluated at the state before the step. In symmetric
mode a second (zeta, u, xi) track handles the y -> x direction on the
transposed similarity matrix, and the two w-gradients are summed. With
zeta fixed at 0 and xi at 0 the algorithm reduces to SogCLR.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .popularity import SimilarityMatrix, phi_objective
from .similarity import SimilarityModel
from .synthetic_world import PairedSample
from ..models.config import NuclrConfig
from ..models.results import EpochMetrics

logger = logging.getLogger(__name__)


class NuclrError(ValueError):
    """Raised for invalid training inputs or configurations."""
    pass


@dataclass
class PopularityTrack:
    """Popularity state for one retrieval direction."""
    zeta: np.ndarray
    u: np.ndarray
    touched: np.ndarray
    xi: float
    velocity: np.ndarray

    @classmethod
    def initial(cls, n: int, zeta0: float) -> "PopularityTrack":
        """zeta = zeta0 * 1, u = 0 (untouched), xi = |zeta0|."""
        return cls(
            zeta=np.full(n, float(zeta0)),
            u=np.zeros(n),
            touched=np.zeros(n, dtype=bool),
            xi=abs(float(zeta0)),
            velocity=np.zeros(n),
        )

    def copy(self) -> "PopularityTrack":
        return PopularityTrack(
            zeta=self.zeta.copy(),
            u=self.u.copy(),
            touched=self.touched.copy(),
            xi=self.xi,
            velocity=self.velocity.copy(),
        )


@dataclass
class NuclrState:
    """
    Full optimizer state.

    Attributes:
        params: Model parameter vector w
        forward: Popularity track of the x -> y direction
        reverse: Popularity track of the y -> x direction (symmetric mode only)
        step: Iteration counter t
        w_velocity: Momentum buffer, or AdamW first moment
        w_second: AdamW second moment (unused by momentum)
    """
    params: np.ndarray
    forward: PopularityTrack
    reverse: Optional[PopularityTrack] = None
    step: int = 0
    w_velocity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_second: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def initial(cls, params: np.ndarray, n: int, config: NuclrConfig) -> "NuclrState":
        params = np.array(params, dtype=float)
        reverse = None
        if config.mode == "symmetric":
            reverse = PopularityTrack.initial(n, config.zeta0)
        return cls(
            params=params,
            forward=PopularityTrack.initial(n, config.zeta0),
            reverse=reverse,
            w_velocity=np.zeros_like(params),
            w_second=np.zeros_like(params),
        )

    @property
    def tracks(self) -> List[PopularityTrack]:
        return [self.forward] if self.reverse is None else [self.forward, self.reverse]

    @property
    def zeta(self) -> np.ndarray:
        return self.forward.zeta

    @property
    def u(self) -> np.ndarray:
        return self.forward.u

    @property
    def xi(self) -> float:
        return self.forward.xi

    def copy(self) -> "NuclrState":
        return NuclrState(
            params=self.params.copy(),
            forward=self.forward.copy(),
            reverse=None if self.reverse is None else self.reverse.copy(),
            step=self.step,
            w_velocity=self.w_velocity.copy(),
            w_second=self.w_second.copy(),
        )


@dataclass
class TrainingResult:
    """Trained model, final state and one metrics row per epoch."""
    model: SimilarityModel
    state: NuclrState
    metrics: List[EpochMetrics]


def check_batch(batch: Sequence[int], n: int) -> np.ndarray:
    """Validate a minibatch of distinct pair indices."""
    batch = np.asarray(batch, dtype=int)
    if batch.ndim != 1 or batch.size < 2:
        raise NuclrError(f"A minibatch needs at least 2 pairs, got {batch.size}")
    if np.any(batch < 0) or np.any(batch >= n):
        raise NuclrError(f"Minibatch indices must lie in [0, {n})")
    if np.unique(batch).size != batch.size:
        raise NuclrError("Minibatch indices must be distinct")
    return batch


def pair_weights(K_b: np.ndarray, zeta_b: np.ndarray, tau: float) -> np.ndarray:
    """e_ij = exp((K_ij - K_ii - zeta_j) / tau) off the diagonal, 0 on it."""
    e = np.exp((K_b - np.diag(K_b)[:, None] - zeta_b[None, :]) / tau)
    np.fill_diagonal(e, 0.0)
    return e


def batch_phi_estimates(K_b: np.ndarray, zeta_b: np.ndarray, n: int, tau: float) -> np.ndarray:
    """phi_hat_i for every i in the batch; exact phi_i when the batch is all of [n]."""
    B = K_b.shape[0]
    if B < 2:
        raise NuclrError(f"A minibatch needs at least 2 pairs, got {B}")
    return (n - 1) / (B - 1) * pair_weights(K_b, zeta_b, tau).sum(axis=1)


def zeta_gradient(
    K_b: np.ndarray, zeta_b: np.ndarray, u_b: np.ndarray, n: int, tau: float
) -> np.ndarray:
    """
    Moving-average-corrected stochastic gradient for zeta_j, j in the batch.

    G_j = (1/B) [-eps_j / (eps_j + u_j) - sum_{i != j} c e_ij / (eps_i + u_i)] + 1/n
    with eps_i = exp(-zeta_i / tau) and c = (n - 1) / (B - 1).
    """
    B = K_b.shape[0]
    scale = (n - 1) / (B - 1)
    eps = np.exp(-zeta_b / tau)
    denom = eps + u_b
    e = pair_weights(K_b, zeta_b, tau)
    cross = scale * (e / denom[:, None]).sum(axis=0)
    return (-eps / denom - cross) / B + 1.0 / n


def weight_coefficients(
    K_b: np.ndarray,
    zeta_b: np.ndarray,
    u_b: np.ndarray,
    eps_tilde: np.ndarray,
    n: int,
    tau: float,
) -> np.ndarray:
    """
    Coefficients C with G(w) = grad_w sum_ij C_ij E_w(x_i, y_j).

    C_ij = a_i e_ij for j != i and C_ii = -a_i sum_{j != i} e_ij,
    where a_i = c / (B (eps_tilde_i + u_i)).
    """
    B = K_b.shape[0]
    scale = (n - 1) / (B - 1)
    e = pair_weights(K_b, zeta_b, tau)
    a = scale / (B * (eps_tilde + u_b))
    C = a[:, None] * e
    C[np.diag_indices(B)] = -a * e.sum(axis=1)
    return C


def update_u(
    u: np.ndarray,
    touched: np.ndarray,
    batch: np.ndarray,
    estimates: np.ndarray,
    gamma: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    u_i <- (1 - gamma) u_i + gamma phi_hat_i for i in the batch.

    An entry's first update uses gamma = 1. Entries outside the batch are
    left unchanged.

    Returns:
        (new u, new touched mask)
    """
    if not 0 < gamma <= 1:
        raise NuclrError(f"gamma must lie in (0, 1], got {gamma}")
    u = u.copy()
    touched = touched.copy()
    weight = np.where(touched[batch], gamma, 1.0)
    u[batch] = (1.0 - weight) * u[batch] + weight * estimates
    touched[batch] = True
    return u, touched


def scheduled_lr(base: float, step: int, total_steps: int, schedule: str) -> float:
    """Constant rate, or cosine decay 0.5 * base * (1 + cos(pi * t / T)) to 0."""
    if schedule == "constant" or total_steps <= 0:
        return base
    progress = min(step, total_steps) / total_steps
    return 0.5 * base * (1.0 + np.cos(np.pi * progress))


def _eps_tilde(track: PopularityTrack, zeta_b: np.ndarray, config: NuclrConfig) -> np.ndarray:
    if config.use_xi:
        return np.full(zeta_b.shape, np.exp(-track.xi / config.tau))
    return np.exp(-zeta_b / config.tau)


def _batch_matrix(
    state: NuclrState, batch: np.ndarray, model: SimilarityModel, sample: PairedSample
) -> np.ndarray:
    current = model.with_params(state.params)
    return current.similarity_matrix(sample.anchors[batch], sample.targets[batch])


def _directions(state: NuclrState, K_b: np.ndarray) -> List[Tuple[PopularityTrack, np.ndarray]]:
    out = [(state.forward, K_b)]
    if state.reverse is not None:
        out.append((state.reverse, K_b.T))
    return out


def _require_params(model: SimilarityModel) -> None:
    if model.n_params == 0:
        raise NuclrError(f"Training needs a parameterized model, got {model.kind.value}")


def minibatch_phi(
    i: int,
    batch: Sequence[int],
    state: NuclrState,
    model: SimilarityModel,
    sample: PairedSample,
    tau: float,
    reverse: bool = False,
) -> float:
    """
    Stochastic estimate of phi_i from a minibatch containing i.

    Raises:
        NuclrError: If the batch has fewer than 2 pairs or does not contain i
    """
    batch = check_batch(batch, sample.n)
    hits = np.flatnonzero(batch == i)
    if hits.size == 0:
        raise NuclrError(f"Anchor {i} is not in the minibatch")
    track = state.reverse if reverse else state.forward
    if track is None:
        raise NuclrError("State has no reverse track (unidirectional mode)")
    K_b = _batch_matrix(state, batch, model, sample)
    if reverse:
        K_b = K_b.T
    return float(batch_phi_estimates(K_b, track.zeta[batch], sample.n, tau)[hits[0]])


def grad_zeta(
    state: NuclrState,
    batch: Sequence[int],
    model: SimilarityModel,
    sample: PairedSample,
    config: NuclrConfig,
    reverse: bool = False,
) -> np.ndarray:
    """zeta-gradient for the batch coordinates, using the state's current u."""
    batch = check_batch(batch, sample.n)
    track = state.reverse if reverse else state.forward
    if track is None:
        raise NuclrError("State has no reverse track (unidirectional mode)")
    K_b = _batch_matrix(state, batch, model, sample)
    if reverse:
        K_b = K_b.T
    return zeta_gradient(K_b, track.zeta[batch], track.u[batch], sample.n, config.tau)


def grad_w(
    state: NuclrState,
    batch: Sequence[int],
    model: SimilarityModel,
    sample: PairedSample,
    config: NuclrConfig,
) -> np.ndarray:
    """
    Model gradient, summed over directions in symmetric mode.

    Raises:
        NuclrError: For parameter-free models or invalid batches
    """
    _require_params(model)
    batch = check_batch(batch, sample.n)
    K_b = _batch_matrix(state, batch, model, sample)
    return _model_gradient(state, batch, K_b, model, sample, config)


def _model_gradient(
    state: NuclrState,
    batch: np.ndarray,
    K_b: np.ndarray,
    model: SimilarityModel,
    sample: PairedSample,
    config: NuclrConfig,
) -> np.ndarray:
    C = np.zeros_like(K_b)
    for index, (track, K_dir) in enumerate(_directions(state, K_b)):
        zeta_b = track.zeta[batch]
        coeff = weight_coefficients(
            K_dir, zeta_b, track.u[batch], _eps_tilde(track, zeta_b, config), sample.n, config.tau
        )
        # reverse coefficients index (target, anchor)
        C += coeff if index == 0 else coeff.T
    current = model.with_params(state.params)
    return current.weighted_similarity_grad(sample.anchors[batch], sample.targets[batch], C)


def _apply_w_update(state: NuclrState, grad: np.ndarray, lr: float, config: NuclrConfig) -> None:
    if config.w_optimizer == "momentum":
        state.w_velocity = config.momentum_w * state.w_velocity + grad
        state.params = state.params - lr * state.w_velocity
        return
    k = state.step + 1
    state.w_velocity = config.adam_beta1 * state.w_velocity + (1 - config.adam_beta1) * grad
    state.w_second = config.adam_beta2 * state.w_second + (1 - config.adam_beta2) * grad ** 2
    m_hat = state.w_velocity / (1 - config.adam_beta1 ** k)
    v_hat = state.w_second / (1 - config.adam_beta2 ** k)
    state.params = state.params - lr * (
        m_hat / (np.sqrt(v_hat) + config.adam_eps) + config.weight_decay * state.params
    )


def nuclr_step(
    state: NuclrState,
    batch: Sequence[int],
    model: SimilarityModel,
    sample: PairedSample,
    config: NuclrConfig,
    total_steps: int = 0,
    freeze_zeta: bool = False,
) -> NuclrState:
    """
    One NUCLR iteration on a minibatch.

    Args:
        state: State before the step (not modified)
        batch: Distinct pair indices
        model: Model template; parameters are taken from the state
        sample: Training pairs
        config: Hyperparameters
        total_steps: Step count of the whole run, for the cosine schedule
        freeze_zeta: Leave zeta and xi unchanged (u and w still update)

    Returns:
        New state with the step counter advanced
    """
    _require_params(model)
    batch = check_batch(batch, sample.n)
    n = sample.n
    new = state.copy()
    K_b = _batch_matrix(state, batch, model, sample)
    update_zeta = config.learn_zeta and not freeze_zeta

    for new_track, (track, K_dir) in zip(new.tracks, _directions(state, K_b)):
        zeta_b = track.zeta[batch]
        estimates = batch_phi_estimates(K_dir, zeta_b, n, config.tau)
        new_track.u, new_track.touched = update_u(
            track.u, track.touched, batch, estimates, config.gamma
        )

    # gradients at the pre-step zeta/xi and post-EMA u
    g_w = _model_gradient(new, batch, K_b, model, sample, config)
    zeta_grads = []
    if update_zeta:
        for new_track, (_, K_dir) in zip(new.tracks, _directions(state, K_b)):
            zeta_grads.append(
                zeta_gradient(K_dir, new_track.zeta[batch], new_track.u[batch], n, config.tau)
            )

    if update_zeta:
        lr_zeta = scheduled_lr(config.lr_zeta, state.step, total_steps, config.schedule)
        for new_track, g in zip(new.tracks, zeta_grads):
            velocity = config.momentum_zeta * new_track.velocity[batch] + g
            new_track.velocity[batch] = velocity
            new_track.zeta[batch] = new_track.zeta[batch] - lr_zeta * velocity

    lr_w = scheduled_lr(config.lr_w, state.step, total_steps, config.schedule)
    _apply_w_update(new, g_w, lr_w, config)

    if update_zeta:
        for new_track in new.tracks:
            new_track.xi = max(new_track.xi, float(np.max(np.abs(new_track.zeta))))
    new.step = state.step + 1
    return new


def phi_full(model: SimilarityModel, sample: PairedSample, state: NuclrState, tau: float) -> float:
    """Full-batch Phi_t at the state's zeta, summed over directions."""
    K = model.similarity_matrix(sample.anchors, sample.targets)
    return float(
        sum(phi_objective(track.zeta, SimilarityMatrix(K_dir, tau))
            for track, K_dir in _directions(state, K))
    )


def psi_full(model: SimilarityModel, sample: PairedSample, state: NuclrState, tau: float) -> float:
    """
    Full-batch Psi_t(w) = (1/n) sum_i tau log(eps_i + phi_i(w, zeta)), summed over directions.
    """
    K = model.similarity_matrix(sample.anchors, sample.targets)
    return float(
        sum(phi_objective(track.zeta, SimilarityMatrix(K_dir, tau)) - np.mean(track.zeta)
            for track, K_dir in _directions(state, K))
    )


def psi_full_gradient(
    model: SimilarityModel, sample: PairedSample, state: NuclrState, tau: float
) -> np.ndarray:
    """Exact gradient of psi_full with respect to the model parameters."""
    _require_params(model)
    n = sample.n
    K = model.similarity_matrix(sample.anchors, sample.targets)
    C = np.zeros_like(K)
    for index, (track, K_dir) in enumerate(_directions(state, K)):
        phi = pair_weights(K_dir, track.zeta, tau).sum(axis=1)
        eps = np.exp(-track.zeta / tau)
        coeff = weight_coefficients(K_dir, track.zeta, phi, eps, n, tau)
        C += coeff if index == 0 else coeff.T
    return model.weighted_similarity_grad(sample.anchors, sample.targets, C)


def recall_at_1(model: SimilarityModel, anchors: np.ndarray, targets: np.ndarray) -> float:
    """
    Fraction of pairs retrieved at rank 1, averaged over x -> y and y -> x.

    Ties go to the lowest index.
    """
    K = model.similarity_matrix(anchors, targets)
    index = np.arange(K.shape[0])
    forward = np.mean(np.argmax(K, axis=1) == index)
    backward = np.mean(np.argmax(K, axis=0) == index)
    return float(0.5 * (forward + backward))


def zero_shot_classify(
    model: SimilarityModel, x: np.ndarray, class_prototypes: Sequence[np.ndarray]
) -> int:
    """1-nearest-neighbour class under the model's similarity; ties go to the lowest index."""
    if len(class_prototypes) == 0:
        raise NuclrError("Zero-shot classification needs at least one class prototype")
    scores = model.similarity_matrix(np.atleast_2d(x), np.vstack(class_prototypes))[0]
    return int(np.argmax(scores))


def _epoch_metrics(
    epoch: int,
    model: SimilarityModel,
    state: NuclrState,
    sample: PairedSample,
    eval_sample: PairedSample,
    config: NuclrConfig,
) -> EpochMetrics:
    if sample.n <= config.full_batch_limit:
        phi = phi_full(model, sample, state, config.tau)
        psi = psi_full(model, sample, state, config.tau)
    else:
        phi = psi = float("nan")
    zetas = np.concatenate([track.zeta for track in state.tracks])
    return EpochMetrics(
        epoch=epoch,
        phi_full=phi,
        psi_full=psi,
        recall_at_1=recall_at_1(model, eval_sample.anchors, eval_sample.targets),
        zeta_min=float(zetas.min()),
        zeta_max=float(zetas.max()),
        xi=max(track.xi for track in state.tracks),
    )


def train(
    sample: PairedSample,
    model: SimilarityModel,
    config: NuclrConfig,
    rng: np.random.Generator,
    eval_sample: Optional[PairedSample] = None,
) -> TrainingResult:
    """
    Run NUCLR for ``config.epochs`` epochs of shuffled minibatches.

    Each epoch draws a fresh permutation and drops a trailing batch shorter
    than B. zeta is frozen for the first ``freeze_epochs`` epochs.

    Args:
        sample: Training pairs
        model: Initial parameterized model
        config: Hyperparameters
        rng: Generator for the epoch permutations
        eval_sample: Pairs for recall@1 (defaults to the training pairs)

    Returns:
        TrainingResult; with zero epochs the initial model is returned unchanged

    Raises:
        NuclrError: If n < B or the model has no parameters
    """
    _require_params(model)
    n = sample.n
    B = config.batch_size
    if n < B:
        raise NuclrError(f"Training needs n >= batch_size, got n={n}, batch_size={B}")
    eval_sample = sample if eval_sample is None else eval_sample
    state = NuclrState.initial(model.params, n, config)
    steps_per_epoch = n // B
    total_steps = config.epochs * steps_per_epoch
    metrics: List[EpochMetrics] = []

    logger.info(
        f"Training NUCLR: n={n} B={B} epochs={config.epochs} mode={config.mode} "
        f"learn_zeta={config.learn_zeta} optimizer={config.w_optimizer}"
    )
    for epoch in range(config.epochs):
        freeze = epoch < config.freeze_epochs
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            batch = order[k * B:(k + 1) * B]
            state = nuclr_step(state, batch, model, sample, config, total_steps, freeze)
        current = model.with_params(state.params)
        row = _epoch_metrics(epoch, current, state, sample, eval_sample, config)
        metrics.append(row)
        logger.info(
            f"✓ epoch {epoch}: psi={row.psi_full:.6g} recall@1={row.recall_at_1:.4f} "
            f"zeta=[{row.zeta_min:.4f}, {row.zeta_max:.4f}] xi={row.xi:.4f}"
        )

    final = model if config.epochs == 0 else model.with_params(state.params)
    return TrainingResult(model=final, state=state, metrics=metrics)


@dataclass(frozen=True)
class BimodalWorld:
    """
    Toy paired data with a shared latent: z uniform on the unit sphere,
    x = A z + noise * eps, y = B z + noise * eps'.
    """
    proj_x: np.ndarray
    proj_y: np.ndarray
    noise: float = 0.05

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        latent_dim: int = 4,
        data_dim: int = 8,
        noise: float = 0.05,
    ) -> "BimodalWorld":
        """Fixed random projections with standard normal entries."""
        if latent_dim < 2 or data_dim < 1:
            raise NuclrError(f"Invalid toy dimensions: latent={latent_dim}, data={data_dim}")
        proj_x = rng.standard_normal((data_dim, latent_dim))
        proj_y = rng.standard_normal((data_dim, latent_dim))
        return cls(proj_x=proj_x, proj_y=proj_y, noise=noise)

    @property
    def latent_dim(self) -> int:
        return int(self.proj_x.shape[1])

    @property
    def data_dim(self) -> int:
        return int(self.proj_x.shape[0])

    def sample(self, n: int, rng: np.random.Generator, tau: float) -> PairedSample:
        """n pairs sharing a latent per pair."""
        if n < 1:
            raise NuclrError(f"Sample size must be at least 1, got {n}")
        z = rng.standard_normal((n, self.latent_dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        x = z @ self.proj_x.T + self.noise * rng.standard_normal((n, self.data_dim))
        y = z @ self.proj_y.T + self.noise * rng.standard_normal((n, self.data_dim))
        return PairedSample(anchors=x, targets=y, tau=tau)
