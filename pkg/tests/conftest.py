import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fplmdp.errors import NotStronglyConnected
from fplmdp.graph import build_admdp

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def draw_graph(rng, max_states=5, max_actions=3):
    while True:
        n = int(rng.integers(1, max_states + 1))
        m = int(rng.integers(1, max_actions + 1))
        try:
            return build_admdp(rng.integers(0, n, size=(n, m)))
        except NotStronglyConnected:
            continue


def all_closed_walks(graph, s, k):
    """Every action sequence of length k that returns to s (brute force)."""
    out = []
    for acts in itertools.product(range(graph.num_actions), repeat=k):
        u = s
        for a in acts:
            u = int(graph.next[u, a])
        if u == s:
            out.append(acts)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
