"""Offline leader finding over closed walks.

For a start state ``s`` and length ``k`` the walks in ``C(s, k)`` are the
integral points of a layered flow polytope with one layer per position.
``solve_best_cycle`` optimises a folded loss vector over that polytope with
an LP solver (or, equivalently, a backward shortest-path recursion over the
layers), and ``decompose_to_walk`` reads a walk off an optimal point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .errors import DecompositionFailed, Infeasible, NoExpert
from .graph import AdmdpGraph, ClosedWalk

LP_TOL = 1e-9


@dataclass(frozen=True)
class FoldedLossVector:
    """Loss coefficients ``table[i, s, a]`` for position ``i`` (0-based) of a length-k walk.

    ``table`` already includes the per-position perturbations; ``offset`` is the
    per-(s, k) perturbation, a constant outside the LP.
    """

    s: int
    k: int
    table: np.ndarray
    offset: float = 0.0


def fold(losses, k: int) -> np.ndarray:
    """Sum the losses of times ``j`` into position ``(j - 1) mod k``."""
    losses = np.asarray(losses, dtype=float)
    out = np.zeros((k,) + losses.shape[1:])
    for i in range(min(k, len(losses))):
        out[i] = losses[i::k].sum(axis=0)
    return out


def fold_losses(losses, s: int, k: int, perturbations=None, shape=None) -> FoldedLossVector:
    """Fold ``l_1..l_{t-1}`` onto the ``k`` positions of walks through ``s``.

    ``perturbations`` (optional) provides ``eps[i, s, a]`` and ``delta[s, k]``.
    ``shape`` gives ``(S, A)`` when ``losses`` is empty and no perturbations
    are supplied.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 3:
        if shape is None and perturbations is not None:
            shape = perturbations.eps.shape[1:]
        losses = np.zeros((0,) + tuple(shape))
    table = fold(losses, k)
    offset = 0.0
    if perturbations is not None:
        table = table + perturbations.eps[:k]
        offset = float(perturbations.delta[s, k])
    return FoldedLossVector(s, k, table, offset)


def _lp_matrices(graph: AdmdpGraph, s: int, k: int):
    n, m = graph.num_states, graph.num_actions
    size = k * n * m

    def idx(p, u, a):
        return (p * n + u) * m + a

    rows, cols, vals = [], [], []
    b = []
    r = 0
    # unit mass leaves s at position 1
    for a in range(m):
        rows.append(r), cols.append(idx(0, s, a)), vals.append(1.0)
    b.append(1.0)
    r += 1
    # conservation: what enters v at position p-1 leaves v at position p
    for p in range(1, k):
        for v in range(n):
            for u, a in graph.predecessors[v]:
                rows.append(r), cols.append(idx(p - 1, u, a)), vals.append(1.0)
            for a in range(m):
                rows.append(r), cols.append(idx(p, v, a)), vals.append(-1.0)
            b.append(0.0)
            r += 1
    a_eq = coo_matrix((vals, (rows, cols)), shape=(r, size)).tocsr()

    upper = np.full(size, np.inf)
    for u in range(n):
        if u != s:
            for a in range(m):
                upper[idx(0, u, a)] = 0.0
    into_s = set(graph.predecessors[s])
    for u in range(n):
        for a in range(m):
            if (u, a) not in into_s:
                upper[idx(k - 1, u, a)] = 0.0
    return a_eq, np.array(b), upper


def solve_best_cycle(graph: AdmdpGraph, s: int, k: int, folded: FoldedLossVector, method: str = "lp"):
    """Minimise ``<x, l>`` over the convex hull of ``C(s, k)``.

    Returns ``(value, x)`` with ``x`` of shape ``(k, S, A)``. The value
    excludes ``folded.offset``. ``method="dp"`` solves the same problem by a
    backward recursion over positions and returns an integral ``x``.

    Raises:
        Infeasible: if there is no closed walk of length ``k`` through ``s``.
    """
    if method == "dp":
        return _solve_dp(graph, s, k, folded.table)
    if method != "lp":
        raise ValueError(f"unknown method {method!r}")
    a_eq, b_eq, upper = _lp_matrices(graph, s, k)
    c = np.asarray(folded.table, dtype=float).ravel()
    res = linprog(
        c,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=np.column_stack([np.zeros_like(upper), upper]),
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )
    if res.status == 2:
        raise Infeasible(f"no closed walk of length {k} through state {s}")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.clip(res.x, 0.0, None).reshape(k, graph.num_states, graph.num_actions)
    return float(res.fun), x


def backward_values(next_map: np.ndarray, starts: np.ndarray, coef: np.ndarray):
    """Cost-to-go tables for walks that must end at their own start state.

    ``coef`` has shape ``(k, S, A)``. Returns ``(values, choice)`` where
    ``values[i]`` is the cheapest length-k walk from ``starts[i]`` back to
    itself and ``choice[p, i, u]`` is the minimising action at position ``p``.
    """
    k, n, _ = coef.shape
    w = np.full((len(starts), n), np.inf)
    w[np.arange(len(starts)), starts] = 0.0
    choice = np.empty((k, len(starts), n), dtype=np.int64)
    for p in range(k - 1, -1, -1):
        q = coef[p][None, :, :] + w[:, next_map]
        choice[p] = q.argmin(axis=2)
        w = np.take_along_axis(q, choice[p][:, :, None], axis=2)[:, :, 0]
    return w[np.arange(len(starts)), starts], choice


def trace_choice(next_map: np.ndarray, start: int, choice_i: np.ndarray) -> list[int]:
    actions = []
    u = start
    for p in range(choice_i.shape[0]):
        a = int(choice_i[p, u])
        actions.append(a)
        u = int(next_map[u, a])
    return actions


def _solve_dp(graph: AdmdpGraph, s: int, k: int, coef: np.ndarray):
    values, choice = backward_values(graph.next, np.array([s]), np.asarray(coef, dtype=float))
    if not np.isfinite(values[0]):
        raise Infeasible(f"no closed walk of length {k} through state {s}")
    walk = ClosedWalk.from_actions(graph, s, trace_choice(graph.next, s, choice[:, 0]))
    return float(values[0]), walk_indicator(graph, walk)


def walk_indicator(graph: AdmdpGraph, walk: ClosedWalk) -> np.ndarray:
    """The 0/1 point ``x(c)`` of a walk."""
    x = np.zeros((walk.length, graph.num_states, graph.num_actions))
    for p, (u, a) in enumerate(zip(walk.states, walk.actions)):
        x[p, u, a] = 1.0
    return x


def walk_folded_loss(walk: ClosedWalk, folded: FoldedLossVector) -> float:
    """``<x(c), l>`` for a walk (no offset)."""
    return float(sum(folded.table[p, u, a] for p, (u, a) in enumerate(zip(walk.states, walk.actions))))


def decompose_to_walk(graph: AdmdpGraph, s: int, k: int, x, tol: float = 1e-8) -> ClosedWalk:
    """Extract one closed walk from the support of a feasible point.

    Follows, position by position, the heaviest edge out of the current state
    whose head still carries weight at the next position. At an optimal
    point every such walk is optimal.

    Raises:
        DecompositionFailed: if the support does not chain from ``s`` back to ``s``.
    """
    x = np.asarray(x, dtype=float)
    actions = []
    u = s
    for p in range(k):
        best_a, best_w = -1, tol
        for a in range(graph.num_actions):
            w = x[p, u, a]
            if w <= best_w:
                continue
            v = int(graph.next[u, a])
            ok = v == s if p == k - 1 else x[p + 1, v].sum() > tol
            if ok:
                best_a, best_w = a, w
        if best_a < 0:
            raise DecompositionFailed(f"no positive-weight continuation at position {p + 1} from state {u}")
        actions.append(best_a)
        u = int(graph.next[u, best_a])
    return ClosedWalk.from_actions(graph, s, actions)


def decompose_mixture(graph: AdmdpGraph, s: int, k: int, x, tol: float = 1e-8) -> list[tuple[float, ClosedWalk]]:
    """Write a feasible point as a convex combination of walks (at most ``k*S*A + 1`` terms)."""
    residual = np.array(x, dtype=float)
    parts = []
    limit = residual.size + 1
    while residual[0, s].sum() > tol and len(parts) < limit:
        walk = decompose_to_walk(graph, s, k, residual, tol)
        weight = min(residual[p, u, a] for p, (u, a) in enumerate(zip(walk.states, walk.actions)))
        for p, (u, a) in enumerate(zip(walk.states, walk.actions)):
            residual[p, u, a] -= weight
        parts.append((float(weight), walk))
    return parts


@dataclass(frozen=True)
class BestCycle:
    walk: ClosedWalk
    value: float  # offset + folded loss of the walk


def candidate_pairs(graph: AdmdpGraph, start_class: int) -> list[tuple[int, int]]:
    """Start states in ``start_class`` and lengths ``gamma, 2*gamma, ... <= |S|``, in (s, k) order."""
    ks = range(graph.period, graph.num_states + 1, graph.period)
    return [(s, k) for s in range(graph.num_states) if graph.classes[s] == start_class for k in ks]


def best_cycle_overall(graph: AdmdpGraph, losses, perturbations=None, start_class: int = 0, method: str = "lp") -> BestCycle:
    """The closed walk minimising ``delta(s, k) + <x(c), l>`` over all admissible ``(s, k)``.

    Raises:
        NoExpert: if no admissible ``(s, k)`` has a closed walk.
    """
    losses = np.asarray(losses, dtype=float)
    shape = (graph.num_states, graph.num_actions)
    best = None
    for s, k in candidate_pairs(graph, start_class):
        folded = fold_losses(losses, s, k, perturbations, shape=shape)
        try:
            value, x = solve_best_cycle(graph, s, k, folded, method=method)
        except Infeasible:
            continue
        total = folded.offset + value
        if best is None or total < best[0]:
            best = (total, s, k, x)
    if best is None:
        raise NoExpert("no admissible closed walk")
    total, s, k, x = best
    walk = decompose_to_walk(graph, s, k, x)
    return BestCycle(walk, total)


def write_lp(graph: AdmdpGraph, folded: FoldedLossVector, stream) -> None:
    """Dump the (s, k) subproblem in CPLEX LP text format for external cross-checks."""
    s, k = folded.s, folded.k
    a_eq, b_eq, upper = _lp_matrices(graph, s, k)
    n, m = graph.num_states, graph.num_actions
    names = [f"x_{u}_{a}_{p + 1}" for p in range(k) for u in range(n) for a in range(m)]
    coef = np.asarray(folded.table).ravel()

    def expr(pairs: Iterable[tuple[float, str]]) -> str:
        out = []
        for c, name in pairs:
            sign = "-" if c < 0 else "+"
            out.append(f"{sign} {abs(c)!r} {name}")
        return " ".join(out) if out else "0"

    stream.write("\\ closed-walk subproblem\nMinimize\n")
    stream.write(f" obj: {expr((c, nm) for c, nm in zip(coef, names) if c != 0)}\n")
    stream.write("Subject To\n")
    a_eq = a_eq.tocsr()
    for r in range(a_eq.shape[0]):
        row = a_eq.getrow(r)
        stream.write(f" c{r}: {expr(zip(row.data, (names[j] for j in row.indices)))} = {b_eq[r]!r}\n")
    stream.write("Bounds\n")
    for name, ub in zip(names, upper):
        if np.isinf(ub):
            stream.write(f" {name} >= 0\n")
        else:
            stream.write(f" 0 <= {name} <= {ub!r}\n")
    stream.write("End\n")
