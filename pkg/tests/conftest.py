from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def monotone_paths(shape):
    """All monotone unit-step lattice paths from the zero corner to the far corner."""
    dim = len(shape)
    moves = [j for j in range(dim) for _ in range(shape[j] - 1)]
    seen = set()
    for perm in itertools.permutations(moves):
        if perm in seen:
            continue
        seen.add(perm)
        idx = [0] * dim
        path = [tuple(idx)]
        for j in perm:
            idx[j] += 1
            path.append(tuple(idx))
        yield path


def brute_abv(values: np.ndarray) -> float:
    best = 0.0
    for path in monotone_paths(values.shape):
        var = sum(abs(values[b] - values[a]) for a, b in zip(path, path[1:]))
        best = max(best, var)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
