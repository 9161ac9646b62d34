"""
dpmis - discriminative probabilistic modeling with multiple importance sampling.

Provides an analytically tractable synthetic world, multiple importance
sampling estimators of the partition integral, a convex solver for the
non-parametric popularity approximation, the NUCLR stochastic training
algorithm, and a seeded command-line benchmark harness.
"""

from ._version import __version__
from .core.config import ConfigManager

__all__ = [
    "ConfigManager",
    "__version__",
]
