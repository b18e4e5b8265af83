"""Shared fixtures"""

import numpy as np
import pytest

from src.autoencoder import init_params
from src.dataset import generate_synthetic_category

TINY_CHANNELS = (4, 4, 4, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    """Small float64 network for gradient checks and fast forward passes"""
    return init_params(seed=0, channels=TINY_CHANNELS, dtype=np.float64)


@pytest.fixture
def synthetic_index(tmp_path):
    """A small seeded category: 8 train, 4 good + 4 defective test, 32x32"""
    return generate_synthetic_category(tmp_path / "data", seed=3, n_train=8, n_good_test=4,
                                       n_defect_test=4, image_side=32, category="tex-a")
