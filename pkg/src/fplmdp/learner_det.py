"""Learner for deterministic MDPs: mirror the closed-walk FPL leader, re-synchronising on switches."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded
from .fpl import CycleFpl, LambdaMode
from .graph import AdmdpGraph, ClosedWalk, path_of_length
from .records import RunRecord


def run(graph: AdmdpGraph, losses, lambda_mode: LambdaMode, start_state: int = 0, seed=None, method: str = "dp", lstar: float | None = None) -> RunRecord:
    """Play ``T = len(losses)`` steps against an oblivious loss sequence.

    In phase, the action at time ``t`` is the one the current leader walk
    takes at ``t`` had it been followed from time 1. When the leader changes
    and the learner is out of phase, it spends ``gamma * d`` steps on a path
    to where the new leader will be at the end of that path. Leader changes
    during a transit abandon it and replan toward the newest leader; a transit
    still running at the horizon is truncated.

    ``lstar`` overrides the hindsight baseline; by default it is computed by
    enumeration.
    """
    losses = np.asarray(losses, dtype=float)
    horizon = len(losses)
    clock = time.perf_counter()
    fpl = CycleFpl(graph, start_state, lambda_mode, seed=seed, method=method)
    span = graph.transit_length
    nxt = graph.next

    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    incurred = np.empty(horizon)
    transit = np.zeros(horizon, dtype=bool)
    switch = np.zeros(horizon, dtype=bool)
    leaders = [None] * horizon

    c = fpl.leader
    s = start_state
    plan: list[int] = []
    if s != c.state_at(1):
        plan = path_of_length(graph, s, c.state_at(1 + span), span)
    pos = 0
    for i in range(horizon):
        t = i + 1
        if pos < len(plan):
            a = plan[pos]
            pos += 1
            transit[i] = True
        else:
            a = c.actions[i % c.length]
        states[i] = s
        actions[i] = a
        incurred[i] = losses[i, s, a]
        leaders[i] = c.label
        s = int(nxt[s, a])
        new, switched = fpl.step(losses[i])
        if switched:
            switch[i] = True
            c = new
            plan, pos = [], 0
            if s != c.state_at(t + 1):
                plan = path_of_length(graph, s, c.state_at(t + 1 + span), span)

    if lstar is None:
        lstar = best_policy_in_hindsight(graph, losses, start_state).loss
    rec = RunRecord(
        "det", seed, states, actions, incurred, leaders, transit, switch, lstar=lstar,
        wall_time=time.perf_counter() - clock,
    )
    rec.extra["fpl_loss"] = fpl.state.incurred
    rec.extra["lambda"] = fpl.state.lam
    rec.extra["transit_length"] = span
    return rec


@dataclass(frozen=True)
class Hindsight:
    loss: float
    policy: tuple[int, ...]
    walk: ClosedWalk  # the cycle the policy settles into


def _lassos(graph: AdmdpGraph, start: int):
    """Every distinct trajectory of a stationary deterministic policy from ``start``.

    Yields ``(states, actions, loop_at)``: the policy visits ``states`` in
    order and then returns to ``states[loop_at]`` forever.
    """
    stack = [([start], [])]
    while stack:
        states, acts = stack.pop()
        u = states[-1]
        for a in range(graph.num_actions - 1, -1, -1):
            v = int(graph.next[u, a])
            if v in states:
                yield states, acts + [a], states.index(v)
            else:
                stack.append((states + [v], acts + [a]))


def best_policy_in_hindsight(graph: AdmdpGraph, losses, start_state: int = 0, cap: int = 8) -> Hindsight:
    """Minimum total loss of a stationary deterministic policy started at ``start_state``.

    Only the visited part of a policy matters, so trajectories (an initial
    path followed by a cycle) are enumerated instead of raw policies.

    Raises:
        CapExceeded: for graphs with more than ``cap`` states.
    """
    if graph.num_states > cap:
        raise CapExceeded(f"{graph.num_states} states exceeds the enumeration cap {cap}")
    losses = np.asarray(losses, dtype=float)
    horizon = len(losses)
    times = np.arange(horizon)
    best = None
    for states, acts, loop_at in _lassos(graph, start_state):
        m = len(states)
        period = m - loop_at
        idx = np.where(times < m, times, loop_at + (times - loop_at) % period)
        s_seq = np.asarray(states)[idx]
        a_seq = np.asarray(acts)[idx]
        total = float(losses[times, s_seq, a_seq].sum())
        if best is None or total < best[0]:
            best = (total, states, acts, loop_at)
    total, states, acts, loop_at = best
    policy = [0] * graph.num_states
    for u, a in zip(states, acts):
        policy[u] = a
    # rotate the cycle so that walk position 1 coincides with time 1
    cyc = states[loop_at:]
    offset = (-loop_at) % len(cyc)
    cyc = cyc[offset:] + cyc[:offset]
    walk = ClosedWalk.from_actions(graph, cyc[0], [policy[u] for u in cyc])
    return Hindsight(total, tuple(policy), walk)
