import numpy as np
import pytest
from hypothesis import settings

from hiercombine.data import from_arrays
from hiercombine.mcmc import FitConfig

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    """Short chains for unit tests that only need a working fit."""
    return FitConfig(chains=2, iterations=600, warmup=300, thin=1, seed=7)


@pytest.fixture
def pooled_dataset():
    rng = np.random.default_rng(3)
    n = 12
    theta = rng.normal(10, 2, n)
    s = np.exp(rng.normal(0.5, 0.4, n))
    return from_arrays(theta + s * rng.standard_normal(n), s)


@pytest.fixture
def regression_dataset():
    rng = np.random.default_rng(4)
    n = 15
    X = np.column_stack([np.ones(n), rng.standard_normal(n), rng.integers(0, 2, n)])
    s = np.exp(rng.normal(0.3, 0.3, n))
    y = X @ np.array([5.0, 3.0, 1.0]) + rng.normal(0, 1, n) + s * rng.standard_normal(n)
    return from_arrays(y, s, X)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
