"""Deterministic MDPs as labelled digraphs.

States are ``0..n-1`` and actions ``0..m-1``. The transition function is a
dense integer array ``next[s, a]``; everything else (predecessor sets, the
period, cycle classes and the critical length) is derived from it once at
construction time.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CapExceeded, InvalidMdp, NoPath, NotStronglyConnected


def _bfs_order(adj: list[list[int]], root: int) -> list[int]:
    level = [-1] * len(adj)
    level[root] = 0
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    return level


class AdmdpGraph:
    """A strongly connected deterministic MDP.

    Args:
        next_map: array-like of shape ``(num_states, num_actions)`` where
            ``next_map[s][a]`` is the successor of ``s`` under ``a``.

    Raises:
        InvalidMdp: if the table is ragged or names an unknown state.
        NotStronglyConnected: if some state cannot reach another.
    """

    def __init__(self, next_map):
        arr = np.asarray(next_map)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidMdp(f"next map must be a non-empty 2-d table, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvalidMdp("next map entries must be integers")
            arr = arr.astype(np.int64)
        n = arr.shape[0]
        if arr.min() < 0 or arr.max() >= n:
            raise InvalidMdp("next map refers to a state outside 0..num_states-1")
        self.next = arr.astype(np.int64)
        self.next.setflags(write=False)
        self.num_states, self.num_actions = self.next.shape

        succ = [sorted(set(int(v) for v in row)) for row in self.next]
        pred: list[list[int]] = [[] for _ in range(n)]
        for u in range(n):
            for v in succ[u]:
                pred[v].append(u)
        if min(_bfs_order(succ, 0)) < 0 or min(_bfs_order(pred, 0)) < 0:
            raise NotStronglyConnected("transition graph is not strongly connected")
        self._succ = succ

        inbound: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for s in range(n):
            for a in range(self.num_actions):
                inbound[int(self.next[s, a])].append((s, a))
        self.predecessors: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple(p) for p in inbound
        )

        self.period = compute_period(self)
        level = _bfs_order(succ, 0)
        self.classes = np.array([lv % self.period for lv in level], dtype=np.int64)
        self.classes.setflags(write=False)
        self.critical_length = critical_length(self)

    def __repr__(self):
        return (
            f"AdmdpGraph(states={self.num_states}, actions={self.num_actions}, "
            f"period={self.period}, d={self.critical_length})"
        )

    @cached_property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.num_states, self.num_states), dtype=bool)
        for u, vs in enumerate(self._succ):
            adj[u, vs] = True
        return adj

    @property
    def transit_length(self) -> int:
        """Number of steps ``gamma * d`` used to re-synchronise with a walk."""
        return self.period * self.critical_length

    def successors(self, s: int) -> list[int]:
        return list(self._succ[s])

    def same_class_mask(self) -> np.ndarray:
        return self.classes[:, None] == self.classes[None, :]


def build_admdp(next_map) -> AdmdpGraph:
    """Validate a transition table and return the analysed graph."""
    return AdmdpGraph(next_map)


def compute_period(graph: AdmdpGraph) -> int:
    """gcd of all closed-walk lengths, via BFS level differences from state 0."""
    succ = graph._succ
    level = _bfs_order(succ, 0)
    g = 0
    for u, vs in enumerate(succ):
        for v in vs:
            g = math.gcd(g, abs(level[u] + 1 - level[v]))
    return g


def _bool_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def critical_length(graph: AdmdpGraph) -> int:
    """Smallest ``d`` with length-``gamma*l`` paths between same-class pairs for all l >= d.

    Once every same-class pair is connected at some multiple ``l``, it stays
    connected at ``l + 1`` (each state has a gamma-step successor in its own
    class), so the first all-true power is the answer.
    """
    n = graph.num_states
    step = np.linalg.matrix_power(graph.adjacency.astype(np.int64), graph.period) > 0
    mask = graph.same_class_mask()
    reach = step.copy()
    for ell in range(1, n * n + 1):
        if np.all(reach[mask]):
            return ell
        reach = _bool_matmul(reach, step)
    raise CapExceeded(f"critical length did not stabilise within {n * n} gamma-steps")


def exact_length_reachability(graph: AdmdpGraph, source: int, length: int) -> np.ndarray:
    """Boolean table ``R[i, v]``: is ``v`` reachable from ``source`` in exactly ``i`` steps."""
    n = graph.num_states
    table = np.zeros((length + 1, n), dtype=bool)
    table[0, source] = True
    adj = graph.adjacency
    for i in range(length):
        table[i + 1] = adj[table[i]].any(axis=0)
    return table


def path_of_length(graph: AdmdpGraph, source: int, target: int, length: int) -> list[int]:
    """Actions that drive ``source`` to ``target`` in exactly ``length`` steps.

    The walk is assembled backwards from ``target``: at each step the
    smallest predecessor ``(state, action)`` that is itself reachable at the
    right exact length is taken. A path always exists when
    ``length >= gamma * d`` and the classes line up.

    Raises:
        NoPath: if no walk of that exact length exists.
    """
    if length < 0:
        raise NoPath("negative length")
    table = exact_length_reachability(graph, source, length)
    if not table[length, target]:
        raise NoPath(f"no walk of length {length} from {source} to {target}")
    actions = [0] * length
    cur = target
    for i in range(length, 0, -1):
        for s, a in graph.predecessors[cur]:
            if table[i - 1, s]:
                actions[i - 1] = a
                cur = s
                break
    return actions


def replay(graph: AdmdpGraph, source: int, actions: Sequence[int]) -> int:
    s = source
    for a in actions:
        s = int(graph.next[s, a])
    return s


@dataclass(frozen=True)
class ClosedWalk:
    """A closed walk of length ``k`` through ``start``; the expert unit of the cycle learner.

    ``states[i]`` and ``actions[i]`` are the from-state and action of edge ``i``.
    """

    start: int
    states: tuple[int, ...]
    actions: tuple[int, ...]

    @classmethod
    def from_actions(cls, graph: AdmdpGraph, start: int, actions: Sequence[int]) -> ClosedWalk:
        k = len(actions)
        if not 1 <= k <= graph.num_states:
            raise InvalidMdp(f"walk length {k} outside 1..{graph.num_states}")
        states = []
        s = start
        for a in actions:
            if not 0 <= a < graph.num_actions:
                raise InvalidMdp(f"unknown action {a}")
            states.append(s)
            s = int(graph.next[s, a])
        if s != start:
            raise InvalidMdp(f"walk from {start} does not return to its start")
        return cls(start, tuple(states), tuple(int(a) for a in actions))

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        k = self.length
        return [
            (self.states[i], self.actions[i], self.states[(i + 1) % k]) for i in range(k)
        ]

    @property
    def label(self) -> str:
        return f"{self.start}:" + ".".join(str(a) for a in self.actions)

    def state_at(self, t: int) -> int:
        return walk_state(self, t)

    def action_at(self, t: int) -> int:
        return walk_action(self, t)

    def is_valid(self, graph: AdmdpGraph) -> bool:
        try:
            return ClosedWalk.from_actions(graph, self.start, self.actions) == self
        except InvalidMdp:
            return False


def walk_state(c: ClosedWalk, t: int) -> int:
    """State occupied at time ``t >= 1`` when ``c`` is followed from time 1."""
    return c.states[(t - 1) % len(c.states)]


def walk_action(c: ClosedWalk, t: int) -> int:
    return c.actions[(t - 1) % len(c.actions)]
