"""
Pytest configuration and fixtures.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from dpmis.core.similarity import LinearCosine  # noqa: E402
from dpmis.core.synthetic_world import generate_sample  # noqa: E402
from dpmis.utils.rng import make_rng  # noqa: E402


@pytest.fixture
def rng():
    """Seeded generator, fresh per test."""
    return make_rng(12345)


@pytest.fixture(scope="session")
def synthetic_sample():
    """n=100 synthetic-world sample at tau=0.2, seed 7."""
    return generate_sample(100, 0.2, make_rng(7), seed=7)


@pytest.fixture
def small_sample():
    """n=12 synthetic-world sample at tau=0.2."""
    return generate_sample(12, 0.2, make_rng(3), seed=3)


@pytest.fixture
def linear_model():
    """Linear cosine model for 2-D anchors and targets, latent dimension 3."""
    return LinearCosine.initialize(2, 2, 3, make_rng(99))


def random_similarity(n: int, seed: int) -> np.ndarray:
    """Random n x n matrix with entries in [-1, 1]."""
    return make_rng(seed).uniform(-1.0, 1.0, size=(n, n))


@pytest.fixture
def random_K():
    """Factory for random similarity matrices."""
    return random_similarity
