import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from mlstmfcn import data as dt


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_dir(tmp_path):
    """Small two-class dataset directory on disk."""
    train, test = dt.make_toy_splits(seed=0, n_train=12, n_test=8, length=16)
    path = tmp_path / "toy"
    dt.write_dataset_dir(str(path), train, test, {"name": "toy", "classes": "sine,square"})
    return str(path)
