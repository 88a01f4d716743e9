import numpy as np
import pytest

from snpl.core import ConstantPropensity, Dataset, SafetySpec


def make_dataset(X, A, Y, probs=(0.5, 0.5)) -> Dataset:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A, dtype=np.int64)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] != X.shape[0]:
        Y = Y.T
    return Dataset(X, A, Y, ConstantPropensity(probs))


def random_dataset(rng: np.random.Generator, n: int, d_x: int = 2, d_y: int = 2,
                   probs=(0.5, 0.5)) -> Dataset:
    K = len(probs)
    X = rng.random((n, d_x))
    A = rng.integers(1, K + 1, size=n)
    Y = rng.random((n, d_y))
    return Dataset(X, A, Y, ConstantPropensity(probs))


@pytest.fixture
def spec_two_guardrails() -> SafetySpec:
    return SafetySpec(goal=1, guardrails=(1, 2), weights=(0.0, -0.1), alpha=0.1)
