"""
Pydantic models for experiment configuration validation.
"""

import hashlib
import json
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

SEED_FIELD = Field(..., ge=0, lt=2**64, description="64-bit seed for every stochastic step")
HASH_EXCLUDE = {"output_dir", "workers"}
DEFAULT_TAU = 0.2


class RuntimeSettings(BaseSettings):
    """Process-level settings, read from DPMIS_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="DPMIS_")

    log_level: str = Field(default="INFO", description="Log level for console and file output")
    log_dir: Optional[str] = Field(default=None, description="Directory for rotating log files")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ["debug", "info", "warning", "error", "critical"]
        if v.lower() not in valid_levels:
            raise ValueError(f"Invalid log level: {v}. Must be one of {valid_levels}")
        return v.upper()


class HashedConfig(BaseModel):
    """Base for configs whose outputs carry a config hash."""

    model_config = {"extra": "forbid"}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, output location excluded."""
        payload = self.model_dump(mode="json", exclude=HASH_EXCLUDE)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class GenDataConfig(HashedConfig):
    """Configuration for synthetic dataset generation."""

    seed: int = SEED_FIELD
    n: int = Field(..., ge=1, description="Number of pairs")
    tau: float = Field(default=DEFAULT_TAU, gt=0, description="Temperature")
    output_dir: str = Field(default="results", description="Output directory")


class SolveConfig(HashedConfig):
    """Configuration for the popularity solver command."""

    seed: Optional[int] = Field(
        default=None, ge=0, lt=2**64, description="Seed when generating data"
    )
    n: Optional[int] = Field(
        default=None, ge=1, description="Pairs to generate when no dataset is given"
    )
    dataset: Optional[str] = Field(default=None, description="Dataset CSV written by gen-data")
    tau: Optional[float] = Field(
        default=None, gt=0, description="Temperature; dataset sidecar, else 0.2 for generated data"
    )
    similarity: Literal["ground_truth_bilinear", "constant"] = Field(
        default="ground_truth_bilinear", description="Similarity model used to build K"
    )
    constant_value: float = Field(default=0.0, description="Similarity value of the constant model")
    tol: float = Field(default=1e-10, ge=1e-13, description="Gradient infinity-norm tolerance")
    max_iter: int = Field(default=100_000, ge=1, description="Maximum gradient iterations")
    step: float = Field(default=1.0, gt=0, description="Initial Armijo step")
    output_dir: str = Field(default="results", description="Output directory")

    @model_validator(mode="after")
    def validate_source(self) -> "SolveConfig":
        """Either a dataset path or (n, seed) must be given."""
        if self.dataset is None and (self.n is None or self.seed is None):
            raise ValueError("Provide --dataset or both --n and --seed")
        return self


class ExperimentConfig(HashedConfig):
    """Shared fields of the synthetic sweeps."""

    seed: int = SEED_FIELD
    tau: float = Field(default=DEFAULT_TAU, gt=0, description="Temperature")
    n_list: List[int] = Field(
        default_factory=lambda: [50, 100, 200, 400, 800, 1600],
        description="Sample sizes, strictly increasing",
    )
    repeats: int = Field(default=10, ge=1, description="Independent samples per n")
    n_true_risk: int = Field(default=50_000, ge=1, description="Fresh pairs for the true risk")
    tol: float = Field(default=1e-10, ge=1e-13, description="Popularity solver tolerance")
    max_iter: int = Field(default=100_000, ge=1, description="Popularity solver iteration cap")
    step: float = Field(default=1.0, gt=0, description="Initial Armijo step")
    output_dir: str = Field(default="results", description="Output directory")
    workers: int = Field(default=1, ge=1, description="Processes for repeat-parallel runs")

    @field_validator("n_list")
    @classmethod
    def validate_n_list(cls, v: List[int]) -> List[int]:
        """Sample sizes must be positive and strictly increasing."""
        if not v:
            raise ValueError("n_list cannot be empty")
        if any(n < 1 for n in v):
            raise ValueError("n_list entries must be at least 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"n_list must be strictly increasing, got {v}")
        return v


class SweepConfig(ExperimentConfig):
    """Generalization-error sweep."""

    gcl_c: float = Field(
        default=1.0, gt=0, description="Constant c of the uniform approximation n*c"
    )


class ErrorTermConfig(ExperimentConfig):
    """Approximation error-term sweep."""

    gcl_c: float = Field(
        default=1.0, gt=0, description="Constant c of the uniform approximation n*c"
    )


class VarianceStudyConfig(HashedConfig):
    """MIS estimator variance study."""

    seed: int = SEED_FIELD
    tau: float = Field(default=DEFAULT_TAU, gt=0, description="Temperature")
    grid: List[Tuple[int, int]] = Field(
        default_factory=lambda: [(8, 1), (32, 1), (8, 4)],
        description="(n, m) pairs: distributions and samples per distribution",
    )
    schemes: List[str] = Field(
        default_factory=lambda: ["balance", "uniform", "single:0"],
        description="Weighting schemes: balance, uniform, single:<index>",
    )
    repeats: int = Field(default=2000, ge=1, description="Resamples per configuration")
    eval_anchor: Optional[List[float]] = Field(
        default_factory=lambda: [0.9, 0.1],
        description="Anchor x_i whose partition integral is estimated (first pool anchor if null)",
    )
    output_dir: str = Field(default="results", description="Output directory")

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        """Every grid point needs n >= 1 and m >= 1."""
        if not v:
            raise ValueError("grid cannot be empty")
        for n, m in v:
            if n < 1 or m < 1:
                raise ValueError(f"Grid entries need n >= 1 and m >= 1, got ({n}, {m})")
        return v

    @field_validator("schemes")
    @classmethod
    def validate_schemes(cls, v: List[str]) -> List[str]:
        """Scheme labels must be known."""
        for label in v:
            name, _, index = label.partition(":")
            if name not in ("balance", "uniform", "single"):
                raise ValueError(f"Unknown weighting scheme: {label}")
            if name == "single" and not index.isdigit():
                raise ValueError(f"Single-distribution scheme needs an index: {label}")
        return v

    @model_validator(mode="after")
    def validate_single_index(self) -> "VarianceStudyConfig":
        """Single-distribution indices must exist for every grid point."""
        smallest = min(n for n, _ in self.grid)
        for label in self.schemes:
            if label.startswith("single:") and int(label.split(":")[1]) >= smallest:
                raise ValueError(f"{label} needs at least {int(label.split(':')[1]) + 1} anchors")
        return self


class NuclrConfig(BaseModel):
    """Hyperparameters of the stochastic training algorithm."""

    model_config = {"extra": "forbid"}

    tau: float = Field(default=0.1, gt=0, description="Temperature")
    batch_size: int = Field(default=64, ge=2, description="Minibatch size B")
    epochs: int = Field(default=30, ge=0, description="Training epochs T")
    gamma: float = Field(default=0.8, gt=0, le=1, description="Moving-average weight")
    lr_w: float = Field(default=0.2, gt=0, description="Model learning rate")
    lr_zeta: float = Field(default=0.05, gt=0, description="Popularity learning rate")
    momentum_w: float = Field(default=0.9, ge=0, lt=1, description="Model momentum")
    momentum_zeta: float = Field(default=0.9, ge=0, lt=1, description="Popularity momentum")
    zeta0: float = Field(default=0.0, description="Initial value of every zeta entry")
    freeze_epochs: int = Field(default=5, ge=0, description="Epochs with zeta frozen")
    schedule: Literal["constant", "cosine"] = Field(
        default="cosine", description="Learning-rate schedule"
    )
    mode: Literal["unidirectional", "symmetric"] = Field(
        default="symmetric", description="One retrieval direction or both"
    )
    w_optimizer: Literal["momentum", "adamw"] = Field(
        default="momentum", description="Model optimizer"
    )
    weight_decay: float = Field(
        default=0.02, ge=0, description="Decoupled weight decay (adamw only)"
    )
    adam_beta1: float = Field(default=0.9, ge=0, lt=1, description="First-moment decay (adamw)")
    adam_beta2: float = Field(default=0.999, ge=0, lt=1, description="Second-moment decay (adamw)")
    adam_eps: float = Field(default=1e-8, gt=0, description="Denominator offset (adamw)")
    learn_zeta: bool = Field(default=True, description="Update zeta after the freeze epochs")
    use_xi: bool = Field(
        default=True, description="Replace the positive-pair weight by exp(-xi/tau)"
    )
    sogclr: bool = Field(default=False, description="zeta fixed at 0 and xi at 0")
    full_batch_limit: int = Field(
        default=4096, ge=0, description="Largest n for full-batch metrics"
    )

    @model_validator(mode="after")
    def apply_sogclr(self) -> "NuclrConfig":
        """The SogCLR configuration pins zeta and xi at zero."""
        if self.sogclr:
            self.learn_zeta = False
            self.zeta0 = 0.0
        return self


class TrainConfig(HashedConfig):
    """Toy or user-data training run."""

    seed: int = SEED_FIELD
    nuclr: NuclrConfig = Field(default_factory=NuclrConfig, description="Algorithm hyperparameters")
    dataset: Optional[str] = Field(default=None, description="Paired CSV with x*/y* columns")
    eval_dataset: Optional[str] = Field(default=None, description="Held-out paired CSV")
    n_train: int = Field(default=2048, ge=2, description="Toy training pairs")
    n_eval: int = Field(default=256, ge=1, description="Toy evaluation pairs")
    latent_dim: int = Field(default=4, ge=2, description="Toy latent dimension")
    data_dim: int = Field(default=8, ge=1, description="Toy observation dimension")
    noise: float = Field(default=0.05, ge=0, description="Toy observation noise")
    embed_dim: int = Field(default=8, ge=1, description="Embedding dimension d_L")
    output_dir: str = Field(default="results", description="Output directory")

    @model_validator(mode="after")
    def validate_batch(self) -> "TrainConfig":
        """A toy run needs at least one full batch."""
        if self.dataset is None and self.n_train < self.nuclr.batch_size:
            raise ValueError(
                f"n_train={self.n_train} is smaller than batch_size={self.nuclr.batch_size}"
            )
        return self
