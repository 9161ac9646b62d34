"""Numerical core: synthetic world, similarity models, estimators, solver and training."""

from .config import ConfigManager

__all__ = [
    "ConfigManager",
]
