import numpy as np
import pytest

from semforge.core import DataSet, ExoAssignment
from semforge.simgen import NetworkSpec, gen_dataset, gen_network


def small_system(n=400, seed=0, p=6, ee=1, **kw):
    gt = gen_network(NetworkSpec(p=p, ee_count=ee, seed=seed, **kw))
    return gt, gen_dataset(gt, n, seed=seed + 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_node():
    """y0 -> y1 with a strong effect; one private instrument each."""
    rng = np.random.default_rng(7)
    n = 300
    X = rng.binomial(2, 0.5, size=(n, 2)).astype(float)
    y0 = X[:, 0] + 0.1 * rng.standard_normal(n)
    y1 = 0.8 * y0 + X[:, 1] + 0.1 * rng.standard_normal(n)
    return DataSet(np.column_stack([y0, y1]), X, ("a", "b"), ("xa", "xb")), ExoAssignment(((0,), (1,)))
