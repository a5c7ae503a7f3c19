import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)


def random_symmetric(gen, n, zero_diagonal=True, scale=1.0):
    """Random symmetric matrix, optionally with a zero diagonal."""
    m = gen.normal(size=(n, n)) * scale
    m = np.triu(m, 1 if zero_diagonal else 0)
    out = m + np.triu(m, 1).T
    return out
