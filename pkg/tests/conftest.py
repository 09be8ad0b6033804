import numpy as np
import pytest

from compatkit import ActiveSet, GramMatrix, gram, standardize


def sample_gram(seed: int, n: int, p: int) -> GramMatrix:
    """Gram matrix of a standardized Gaussian design; the workhorse instance."""
    rng = np.random.default_rng(seed)
    return gram(standardize(rng.standard_normal((n, p))).design)


def random_active(seed: int, p: int, s: int) -> ActiveSet:
    rng = np.random.default_rng(seed)
    return ActiveSet(tuple(int(j) for j in rng.choice(p, size=s, replace=False)))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
