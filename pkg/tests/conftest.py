import os

import numpy as np
import pytest

DATA_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "data"))


def dataset_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


def require_dataset(name: str) -> str:
    """Path to a benchmark CSV, skipping the test when it is not present.

    The benchmark files are produced by scripts/fetch_data.py; environments
    without access to the upstream hosts (this sandbox resolves no dataset
    mirrors) run the rest of the suite and skip these with this reason.
    """
    path = dataset_path(name)
    if not os.path.exists(path):
        pytest.skip(f"{name} not fetched; run `python scripts/fetch_data.py` "
                    "(requires network access to the dataset hosts)")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
