"""Compiled inner loops for the per-step leader search."""
import numpy as np
from numba import njit


@njit(cache=True)
def best_walk(next_map, starts, coef, offsets):
    """Cheapest closed walk of length ``coef.shape[0]`` over the given start states.

    ``offsets[i]`` is added to the walk value of ``starts[i]``. Ties go to the
    earliest start and, within a start, to the lowest action at each position.
    Returns ``(value, index into starts, actions)``.
    """
    k, n, m = coef.shape
    best_value = np.inf
    best_i = -1
    best_actions = np.zeros(k, dtype=np.int64)
    w = np.empty(n)
    nw = np.empty(n)
    choice = np.empty((k, n), dtype=np.int64)
    for i in range(starts.shape[0]):
        s = starts[i]
        for u in range(n):
            w[u] = np.inf
        w[s] = 0.0
        for p in range(k - 1, -1, -1):
            for u in range(n):
                bv = np.inf
                ba = 0
                for a in range(m):
                    v = coef[p, u, a] + w[next_map[u, a]]
                    if v < bv:
                        bv = v
                        ba = a
                nw[u] = bv
                choice[p, u] = ba
            for u in range(n):
                w[u] = nw[u]
        total = w[s] + offsets[i]
        if total < best_value:
            best_value = total
            best_i = i
            u = s
            for p in range(k):
                a = choice[p, u]
                best_actions[p] = a
                u = next_map[u, a]
    return best_value, best_i, best_actions
