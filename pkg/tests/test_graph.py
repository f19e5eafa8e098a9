import math
from functools import reduce

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import draw_graph
from fplmdp.errors import InvalidMdp, NoPath, NotStronglyConnected
from fplmdp.graph import ClosedWalk, build_admdp, exact_length_reachability, path_of_length, replay


def nx_period(graph):
    g = nx.DiGraph()
    g.add_nodes_from(range(graph.num_states))
    g.add_edges_from((u, int(v)) for u in range(graph.num_states) for v in graph.next[u])
    return reduce(math.gcd, (len(c) for c in nx.simple_cycles(g)))


def walk_lengths(graph, source, upto):
    """lengths[l] = set of states reachable in exactly l steps (brute force by BFS layers)."""
    layers = [{source}]
    for _ in range(upto):
        layers.append({int(v) for u in layers[-1] for v in graph.next[u]})
    return layers


def brute_classes(graph):
    layers = walk_lengths(graph, 0, 2 * graph.num_states)
    cls = {}
    for ell, layer in enumerate(layers):
        for v in layer:
            cls.setdefault(v, ell % graph.period)
    return [cls[v] for v in range(graph.num_states)]


def brute_critical_length(graph, window=60):
    n, g = graph.num_states, graph.period
    same = graph.same_class_mask()
    layers = [walk_lengths(graph, u, g * window) for u in range(n)]
    ok = [all(v in layers[u][g * ell] for u in range(n) for v in range(n) if same[u, v]) for ell in range(1, window)]
    last_bad = max((i + 1 for i, good in enumerate(ok) if not good), default=0)
    assert last_bad < window - 5
    return last_bad + 1


def test_single_self_loop():
    g = build_admdp([[0]])
    assert (g.period, g.critical_length, g.classes.tolist()) == (1, 1, [0])


def test_two_cycle():
    g = build_admdp([[1], [0]])
    assert g.period == 2 and g.classes.tolist() == [0, 1] and g.critical_length == 1


def test_cycle_with_chord():
    # 0->1->2->0 plus 0->0 gives an aperiodic graph
    g = build_admdp([[1, 0], [2, 2], [0, 0]])
    assert g.period == 1
    assert g.transit_length == g.critical_length


def test_rejects_disconnected():
    with pytest.raises(NotStronglyConnected):
        build_admdp([[0], [1]])


def test_rejects_bad_entry():
    with pytest.raises(InvalidMdp):
        build_admdp([[0, 3]])


@given(st.integers(0, 10**6))
def test_period_matches_simple_cycles(seed):
    g = draw_graph(np.random.default_rng(seed))
    assert g.period == nx_period(g)
    assert g.classes.tolist() == brute_classes(g)


@given(st.integers(0, 10**6))
def test_critical_length_matches_brute_force(seed):
    g = draw_graph(np.random.default_rng(seed))
    assert g.critical_length == brute_critical_length(g)


@given(st.integers(0, 10**6), st.integers(0, 12))
def test_path_of_length_exists_iff_brute(seed, length):
    rng = np.random.default_rng(seed)
    g = draw_graph(rng)
    src, dst = (int(x) for x in rng.integers(0, g.num_states, 2))
    reachable = dst in walk_lengths(g, src, length)[length]
    if reachable:
        acts = path_of_length(g, src, dst, length)
        assert len(acts) == length and replay(g, src, acts) == dst
    else:
        with pytest.raises(NoPath):
            path_of_length(g, src, dst, length)


@given(st.integers(0, 10**6))
def test_transit_length_always_connects_same_class(seed):
    g = draw_graph(np.random.default_rng(seed))
    span = g.transit_length
    for u in range(g.num_states):
        table = exact_length_reachability(g, u, span)
        assert np.array_equal(table[span], g.same_class_mask()[u])


def test_closed_walk_indexing():
    g = build_admdp([[1, 0], [2, 2], [0, 0]])
    c = ClosedWalk.from_actions(g, 0, [0, 0, 0])
    assert [c.state_at(t) for t in range(1, 7)] == [0, 1, 2, 0, 1, 2]
    assert c.label == "0:0.0.0" and c.is_valid(g)
    assert c.edges == [(0, 0, 1), (1, 0, 2), (2, 0, 0)]
    with pytest.raises(InvalidMdp):
        ClosedWalk.from_actions(g, 0, [0, 0])
    with pytest.raises(InvalidMdp):
        ClosedWalk.from_actions(g, 0, [1, 1, 1, 1])
