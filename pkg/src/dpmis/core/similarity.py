"""
Parameterized prediction functions E_w(x, y).

Three kinds are provided: the parameter-free ground-truth bilinear form of
the synthetic world, a parameter-free constant, and a trainable two-encoder
model whose encoders are linear projections followed by L2 normalization, so
that every similarity lies in [-1, 1].
"""

import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from scipy.special import logsumexp

from .synthetic_world import log_partition_function

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-8
QUADRATURE_ORDER = 32
QUADRATURE_CHUNK = 1024


class ModelError(ValueError):
    """Raised for invalid model shapes, parameters or unsupported operations."""
    pass


class DegenerateProjectionError(ValueError):
    """Raised when a projected embedding falls below the norm floor."""
    pass


class SimilarityKind(str, Enum):
    """Similarity model kinds."""
    GROUND_TRUTH_BILINEAR = "ground_truth_bilinear"
    LINEAR_COSINE = "linear_cosine"
    CONSTANT = "constant"


def _as_rows(points: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))


class SimilarityModel(ABC):
    """
    Base class for similarity models.

    Models are immutable values: training produces new instances through
    ``with_params`` instead of mutating parameters in place.
    """

    kind: SimilarityKind

    @property
    def n_params(self) -> int:
        """Number of trainable parameters."""
        return int(self.params.size)

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector (empty for parameter-free models)."""
        return np.zeros(0)

    @abstractmethod
    def similarity_matrix(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """
        Similarities between every anchor and every target.

        Args:
            anchors: (n, d1) anchors
            targets: (m, d2) targets

        Returns:
            (n, m) matrix with entry [i, j] = E_w(x_i, y_j)
        """

    def similarity_pairs(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Row-wise similarities E_w(x_i, y_i)."""
        anchors = _as_rows(anchors)
        targets = _as_rows(targets)
        if anchors.shape[0] != targets.shape[0]:
            raise ModelError("Row-wise similarity needs as many anchors as targets")
        out = np.empty(anchors.shape[0])
        for start in range(0, anchors.shape[0], QUADRATURE_CHUNK):
            stop = start + QUADRATURE_CHUNK
            block = self.similarity_matrix(anchors[start:stop], targets[start:stop])
            out[start:stop] = np.diag(block)
        return out

    def similarity(self, x: np.ndarray, y: np.ndarray) -> float:
        """E_w(x, y) for a single pair."""
        return float(self.similarity_matrix(_as_rows(x), _as_rows(y))[0, 0])

    def weighted_similarity_grad(
        self, anchors: np.ndarray, targets: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """
        Gradient of sum_ij weights[i, j] * E_w(x_i, y_j) with respect to w.

        Raises:
            ModelError: For parameter-free models
        """
        raise ModelError(f"{self.kind.value} model has no parameters to differentiate")

    def similarity_grad(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of E_w(x, y) with respect to all parameters."""
        return self.weighted_similarity_grad(_as_rows(x), _as_rows(y), np.ones((1, 1)))

    def with_params(self, params: np.ndarray) -> "SimilarityModel":
        """Copy of the model with a new flat parameter vector."""
        if np.asarray(params).size:
            raise ModelError(f"{self.kind.value} model has no parameters")
        return self

    def log_partition(self, anchors: np.ndarray, tau: float) -> np.ndarray:
        """
        log of the integral over the unit square of exp(E_w(x, y) / tau) dy.

        The base implementation uses tensor Gauss-Legendre quadrature and
        therefore expects two-dimensional targets.
        """
        anchors = _as_rows(anchors)
        nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_ORDER)
        nodes = 0.5 * (nodes + 1.0)
        grid_a, grid_b = np.meshgrid(nodes, nodes, indexing="ij")
        points = np.column_stack([grid_a.ravel(), grid_b.ravel()])
        log_w = np.log(np.outer(0.5 * weights, 0.5 * weights).ravel())
        out = np.empty(anchors.shape[0])
        for start in range(0, anchors.shape[0], QUADRATURE_CHUNK):
            block = self.similarity_matrix(anchors[start:start + QUADRATURE_CHUNK], points)
            out[start:start + QUADRATURE_CHUNK] = logsumexp(block / tau + log_w[None, :], axis=1)
        return out

    @abstractmethod
    def to_checkpoint(self) -> Dict[str, Any]:
        """Checkpoint payload: kind, shape metadata and parameters."""


class GroundTruthBilinear(SimilarityModel):
    """The synthetic world's similarity E(x, y) = x.y."""

    kind = SimilarityKind.GROUND_TRUTH_BILINEAR

    def similarity_matrix(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        anchors = _as_rows(anchors)
        targets = _as_rows(targets)
        if anchors.shape[1] != targets.shape[1]:
            raise ModelError(
                f"Dimension mismatch: anchors {anchors.shape[1]}, targets {targets.shape[1]}"
            )
        return anchors @ targets.T

    def similarity_pairs(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        anchors = _as_rows(anchors)
        targets = _as_rows(targets)
        return np.einsum("ij,ij->i", anchors, targets)

    def log_partition(self, anchors: np.ndarray, tau: float) -> np.ndarray:
        return np.asarray(log_partition_function(_as_rows(anchors), tau))

    def to_checkpoint(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "shapes": {}, "params": []}


class ConstantSimilarity(SimilarityModel):
    """E(x, y) = c for every pair; p_w(y|x) is uniform on the unit square."""

    kind = SimilarityKind.CONSTANT

    def __init__(self, value: float = 0.0):
        if not np.isfinite(value):
            raise ModelError(f"Constant similarity must be finite, got {value}")
        self.value = float(value)

    def similarity_matrix(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        return np.full((_as_rows(anchors).shape[0], _as_rows(targets).shape[0]), self.value)

    def similarity_pairs(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        return np.full(_as_rows(anchors).shape[0], self.value)

    def log_partition(self, anchors: np.ndarray, tau: float) -> np.ndarray:
        return np.full(_as_rows(anchors).shape[0], self.value / tau)

    def to_checkpoint(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "shapes": {}, "params": [], "value": self.value}


class LinearCosine(SimilarityModel):
    """
    Two linear encoders with L2-normalized outputs.

    E_w(x, y) = <W1 x / |W1 x|, W2 y / |W2 y|> with W1 of shape (d_L, d1)
    and W2 of shape (d_L, d2). The flat parameter vector is W1 then W2,
    both row-major.
    """

    kind = SimilarityKind.LINEAR_COSINE

    def __init__(self, w1: np.ndarray, w2: np.ndarray):
        w1 = np.array(w1, dtype=float)
        w2 = np.array(w2, dtype=float)
        if w1.ndim != 2 or w2.ndim != 2:
            raise ModelError("Projection matrices must be 2-D")
        if w1.shape[0] != w2.shape[0]:
            raise ModelError(
                f"Projections must share the latent dimension: {w1.shape[0]} vs {w2.shape[0]}"
            )
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise ModelError("Projection matrices contain non-finite entries")
        w1.setflags(write=False)
        w2.setflags(write=False)
        self.w1 = w1
        self.w2 = w2

    @classmethod
    def initialize(
        cls, d1: int, d2: int, d_latent: int, rng: np.random.Generator
    ) -> "LinearCosine":
        """Entries i.i.d. uniform on [-1/sqrt(d_in), 1/sqrt(d_in)]."""
        bound1 = 1.0 / np.sqrt(d1)
        bound2 = 1.0 / np.sqrt(d2)
        w1 = rng.uniform(-bound1, bound1, size=(d_latent, d1))
        w2 = rng.uniform(-bound2, bound2, size=(d_latent, d2))
        return cls(w1, w2)

    @property
    def d_latent(self) -> int:
        return int(self.w1.shape[0])

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def with_params(self, params: np.ndarray) -> "LinearCosine":
        params = np.asarray(params, dtype=float)
        if params.size != self.w1.size + self.w2.size:
            raise ModelError(
                f"Expected {self.w1.size + self.w2.size} parameters, got {params.size}"
            )
        split = self.w1.size
        return LinearCosine(
            params[:split].reshape(self.w1.shape), params[split:].reshape(self.w2.shape)
        )

    @staticmethod
    def _encode(weights: np.ndarray, points: np.ndarray, side: str):
        points = _as_rows(points)
        if points.shape[1] != weights.shape[1]:
            raise ModelError(
                f"{side} dimension {points.shape[1]} does not match projection {weights.shape}"
            )
        projected = points @ weights.T
        norms = np.linalg.norm(projected, axis=1)
        if np.any(norms < NORM_FLOOR):
            raise DegenerateProjectionError(
                f"{side} projection norm {norms.min():.3e} is below the floor {NORM_FLOOR}"
            )
        return points, projected / norms[:, None], norms

    def embed_anchors(self, anchors: np.ndarray) -> np.ndarray:
        """Unit-norm anchor embeddings, shape (n, d_L)."""
        return self._encode(self.w1, anchors, "anchor")[1]

    def embed_targets(self, targets: np.ndarray) -> np.ndarray:
        """Unit-norm target embeddings, shape (m, d_L)."""
        return self._encode(self.w2, targets, "target")[1]

    def similarity_matrix(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        a_hat = self.embed_anchors(anchors)
        b_hat = self.embed_targets(targets)
        # clip only absorbs rounding of unit-vector inner products
        return np.clip(a_hat @ b_hat.T, -1.0, 1.0)

    def similarity_pairs(self, anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
        a_hat = self.embed_anchors(anchors)
        b_hat = self.embed_targets(targets)
        return np.clip(np.einsum("ij,ij->i", a_hat, b_hat), -1.0, 1.0)

    def weighted_similarity_grad(
        self, anchors: np.ndarray, targets: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """
        Gradient of sum_ij weights[i, j] * E_w(x_i, y_j) for both projections.

        The chain rule runs through the normalization: for a = W1 x with
        a_hat = a / |a|, d a_hat^T g / d a = (g - (g . a_hat) a_hat) / |a|.

        Args:
            anchors: (n, d1) anchors
            targets: (m, d2) targets
            weights: (n, m) coefficients

        Returns:
            Flat gradient matching ``params``
        """
        x, a_hat, a_norm = self._encode(self.w1, anchors, "anchor")
        y, b_hat, b_norm = self._encode(self.w2, targets, "target")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (x.shape[0], y.shape[0]):
            raise ModelError(
                f"Weight matrix shape {weights.shape} does not match "
                f"({x.shape[0]}, {y.shape[0]})"
            )
        g_a = weights @ b_hat
        g_b = weights.T @ a_hat
        g_a = (g_a - np.sum(g_a * a_hat, axis=1, keepdims=True) * a_hat) / a_norm[:, None]
        g_b = (g_b - np.sum(g_b * b_hat, axis=1, keepdims=True) * b_hat) / b_norm[:, None]
        grad_w1 = g_a.T @ x
        grad_w2 = g_b.T @ y
        return np.concatenate([grad_w1.ravel(), grad_w2.ravel()])

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "shapes": {"w1": list(self.w1.shape), "w2": list(self.w2.shape)},
            "params": [float(v) for v in self.params],
        }


def model_from_checkpoint(payload: Dict[str, Any]) -> SimilarityModel:
    """
    Rebuild a model from a checkpoint payload.

    Raises:
        ModelError: If the kind is unknown or shapes do not match the parameters
    """
    try:
        kind = SimilarityKind(payload["kind"])
    except (KeyError, ValueError) as e:
        raise ModelError(f"Unknown similarity model kind in checkpoint: {e}")
    if kind is SimilarityKind.GROUND_TRUTH_BILINEAR:
        return GroundTruthBilinear()
    if kind is SimilarityKind.CONSTANT:
        return ConstantSimilarity(float(payload.get("value", 0.0)))
    shapes = payload.get("shapes", {})
    try:
        shape1 = tuple(int(v) for v in shapes["w1"])
        shape2 = tuple(int(v) for v in shapes["w2"])
    except (KeyError, TypeError) as e:
        raise ModelError(f"Checkpoint is missing projection shapes: {e}")
    params = np.asarray(payload.get("params", []), dtype=float)
    size1 = shape1[0] * shape1[1]
    if params.size != size1 + shape2[0] * shape2[1]:
        raise ModelError(
            f"Checkpoint holds {params.size} parameters for shapes {shape1} and {shape2}"
        )
    return LinearCosine(params[:size1].reshape(shape1), params[size1:].reshape(shape2))


def build_model(kind: str, value: Optional[float] = None) -> SimilarityModel:
    """Parameter-free model by kind name (used by the command-line tools)."""
    if kind == SimilarityKind.GROUND_TRUTH_BILINEAR.value:
        return GroundTruthBilinear()
    if kind == SimilarityKind.CONSTANT.value:
        return ConstantSimilarity(0.0 if value is None else value)
    raise ModelError(f"Model kind '{kind}' needs parameters; load it from a checkpoint")
