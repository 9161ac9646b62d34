"""
Pydantic models for experiment outputs.

Row models list their fields in CSV column order.
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RiskMethod(str, Enum):
    """Empirical risks compared in the sweeps."""
    GCL = "gcl"
    OURS = "ours"
    MLE_EXACT = "mle_exact"
    EXACT = "exact"


class GenErrorRow(BaseModel):
    """Generalization error of one method on one sample"""
    n: int = Field(..., description="Sample size")
    repeat: int = Field(..., description="Repeat index")
    method: RiskMethod = Field(..., description="Risk estimator")
    empirical_risk: float = Field(..., description="Empirical risk on the sample")
    true_risk: float = Field(..., description="Monte Carlo true risk L")
    abs_gen_error: float = Field(..., description="|empirical_risk - true_risk|")
    converged: bool = Field(True, description="Popularity solver converged (ours only)")

    model_config = {"use_enum_values": True}


class ErrorTermRow(BaseModel):
    """Approximation error term of one popularity approximation on one sample"""
    n: int = Field(..., description="Sample size")
    repeat: int = Field(..., description="Repeat index")
    method: RiskMethod = Field(..., description="Popularity approximation")
    error_term: float = Field(..., description="Approximation error term")
    converged: bool = Field(True, description="Popularity solver converged (ours only)")

    model_config = {"use_enum_values": True}


class VarianceRow(BaseModel):
    """Estimator mean and variance of one weighting scheme at one grid point"""
    scheme: str = Field(..., description="Weighting scheme label")
    n: int = Field(..., description="Number of sampling distributions")
    m: int = Field(..., description="Samples per distribution")
    repeats: int = Field(..., description="Resamples")
    mean: float = Field(..., description="Empirical mean of the estimates")
    variance: float = Field(..., description="Empirical variance of the estimates")
    exact: float = Field(..., description="Exact partition function")
    abs_bias: float = Field(..., description="|mean - exact|")


class SolveMetadata(BaseModel):
    """Popularity solver run metadata"""
    n: int = Field(..., description="Number of pairs")
    tau: float = Field(..., description="Temperature")
    tol: float = Field(..., description="Requested gradient tolerance")
    iterations: int = Field(..., description="Gradient iterations run")
    grad_norm: float = Field(..., description="Achieved gradient infinity-norm")
    converged: bool = Field(..., description="Tolerance reached")
    residual: float = Field(..., description="Fixed-point residual")
    scale_z: Optional[float] = Field(None, description="Scale Z aligning q_tilde' with q")
    pearson: Optional[float] = Field(None, description="Pearson correlation of q_tilde and q")


class EpochMetrics(BaseModel):
    """Training metrics at the end of one epoch"""
    epoch: int = Field(..., description="Epoch index")
    phi_full: float = Field(..., description="Full-batch zeta objective (nan when n is large)")
    psi_full: float = Field(..., description="Full-batch model objective (nan when n is large)")
    recall_at_1: float = Field(..., description="Recall@1 averaged over both directions")
    zeta_min: float = Field(..., description="Smallest zeta entry")
    zeta_max: float = Field(..., description="Largest zeta entry")
    xi: float = Field(..., description="Running max of |zeta|_inf")


class TrackCheckpoint(BaseModel):
    """Popularity state of one retrieval direction"""
    zeta: List[float] = Field(..., description="Popularity log-weights")
    u: List[float] = Field(..., description="Moving averages")
    touched: List[bool] = Field(..., description="Entries updated at least once")
    xi: float = Field(..., description="Running max of |zeta|_inf")


class Checkpoint(BaseModel):
    """Trained model plus training state"""
    model: Dict[str, Any] = Field(..., description="Similarity model payload")
    forward: TrackCheckpoint = Field(..., description="x -> y popularity state")
    reverse: Optional[TrackCheckpoint] = Field(None, description="y -> x popularity state")
    step: int = Field(..., description="Iterations run")
    config_hash: str = Field(..., description="Hash of the training configuration")

    model_config = {"protected_namespaces": ()}
