import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.config import BilevelConfig
from core.nn.ndgrad import MLP, MLPGraph
from core.utils.data_utils import BlobSpec, gen_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_blobs():
    return gen_blobs(BlobSpec(classes=2, dim=3, n=80, n_test=40, separation=3.0), seed=7)


@pytest.fixture(scope="session")
def three_class_blobs():
    return gen_blobs(BlobSpec(classes=3, dim=4, n=90, n_test=30, separation=4.0), seed=11)


@pytest.fixture
def tiny_mlp():
    """Two-layer tanh MLP with a nonzero head so gradients are informative."""
    model = MLP.create(MLPGraph((3, 5, 2)), seed=3)
    head_rng = np.random.default_rng(5)
    model.params.tensors["W1"] = head_rng.normal(0.0, 0.5, size=(5, 2))
    model.params.tensors["b1"] = head_rng.normal(0.0, 0.1, size=2)
    return model


@pytest.fixture
def fast_bilevel():
    return BilevelConfig(epochs=2, refresh_epochs=1, fraction=0.25, batch_size=8,
                         projection_epochs=1, final_epochs=2, glister_rounds=2,
                         entropy_base_epochs=1)
