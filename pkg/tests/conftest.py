import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from permrank.core import Dataset, FactorPair, RankedList  # noqa: E402
from permrank.latent_pl import MixtureModel  # noqa: E402
from permrank.loglinear.models import PairwiseModel, PositionalModel  # noqa: E402


def random_lists(rng, num_users, num_items, n_min, n_max):
    lists = []
    for u in range(num_users):
        n = int(rng.integers(n_min, n_max + 1))
        lists.append(RankedList(u, tuple(int(y) for y in rng.permutation(num_items)[:n])))
    return Dataset(num_users, num_items, tuple(lists))


def random_factors(rng, N, M, K, scale=1.0):
    return FactorPair(scale * rng.standard_normal((N, K)), scale * rng.standard_normal((K, M)))


def random_mixture(rng, N, M, K, scale=1.0):
    return MixtureModel(rng.dirichlet(np.ones(K), size=N), scale * rng.standard_normal((K, M)))


def random_pairwise(rng, M, density=0.6, scale=1.0):
    pairs = [(a, b) for a in range(M) for b in range(M) if a != b and rng.random() < density]
    return PairwiseModel(M, scale * rng.standard_normal(M), tuple(pairs), scale * rng.standard_normal(len(pairs)))


def random_positional(rng, N, M, K, scale=1.0):
    return PositionalModel(random_factors(rng, N, M, K, scale))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_data():
    # 3 users, 5 items
    return Dataset(3, 5, (
        RankedList(0, (3, 1, 4, 0)),
        RankedList(1, (2, 0, 1)),
        RankedList(2, (4, 2, 3, 1, 0)),
    ))
