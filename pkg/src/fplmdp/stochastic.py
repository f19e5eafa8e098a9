"""Stochastic MDPs: diameter, hitting times, catching plans and policy state distributions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    AssumptionViolated,
    CapExceeded,
    ExploringStartsViolated,
    InvalidMdp,
    InvariantViolation,
    NotCommunicating,
)

PROB_TOL = 1e-12
DRIFT_TOL = 1e-9


class StochasticMdp:
    """Finite MDP with known transition kernel ``kernel[s, a, s']``.

    ``loop_state``/``loop_action`` name a state with a deterministic self-loop
    (needed by the catching routine). When not supplied, the first such pair
    found in the kernel is used, if any.
    """

    def __init__(self, kernel, start_dist, loop_state=None, loop_action=None):
        kernel = np.array(kernel, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise InvalidMdp(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if np.any(kernel < 0) or np.any(np.abs(kernel.sum(axis=2) - 1.0) > PROB_TOL):
            raise InvalidMdp("every kernel row P(s, a, .) must be a probability vector")
        start_dist = np.array(start_dist, dtype=float)
        if start_dist.shape != (kernel.shape[0],):
            raise InvalidMdp("start distribution has the wrong length")
        if np.any(start_dist < 0) or abs(start_dist.sum() - 1.0) > PROB_TOL:
            raise InvalidMdp("start distribution must be a probability vector")
        self.kernel = kernel
        self.start_dist = start_dist
        self.num_states, self.num_actions = kernel.shape[:2]
        for arr in (self.kernel, self.start_dist):
            arr.setflags(write=False)

        support = (kernel > 0).any(axis=1)
        if not _strongly_connected(support):
            raise NotCommunicating("some state cannot be reached from another under any policy")

        if loop_state is None and loop_action is None:
            found = _find_loop(kernel)
            self.loop_state, self.loop_action = found if found else (None, None)
        else:
            if loop_state is None or loop_action is None:
                raise InvalidMdp("loop_state and loop_action must be given together")
            if kernel[loop_state, loop_action, loop_state] != 1.0:
                raise AssumptionViolated(
                    f"P({loop_state}, {loop_action}, {loop_state}) must equal 1 exactly"
                )
            self.loop_state, self.loop_action = int(loop_state), int(loop_action)

    @classmethod
    def from_graph(cls, graph, start_dist=None, start_state: int = 0) -> StochasticMdp:
        n, m = graph.num_states, graph.num_actions
        kernel = np.zeros((n, m, n))
        for s in range(n):
            for a in range(m):
                kernel[s, a, graph.next[s, a]] = 1.0
        if start_dist is None:
            start_dist = np.zeros(n)
            start_dist[start_state] = 1.0
        return cls(kernel, start_dist)

    def __repr__(self):
        return f"StochasticMdp(states={self.num_states}, actions={self.num_actions}, loop={self.loop_state})"

    @property
    def exploring_mass(self) -> float:
        """The largest ``alpha`` with ``start_dist >= alpha`` everywhere."""
        return float(self.start_dist.min())

    def require_exploring_starts(self, alpha: float) -> None:
        if alpha <= 0 or self.exploring_mass < alpha - PROB_TOL:
            raise ExploringStartsViolated(
                f"start distribution has minimum mass {self.exploring_mass}, need {alpha}"
            )

    @property
    def action_independent(self) -> bool:
        """True when every action induces the same next-state distribution."""
        return bool(np.all(self.kernel == self.kernel[:, :1, :]))

    @cached_property
    def diameter_result(self) -> DiameterResult:
        return diameter(self)

    @property
    def diameter(self) -> float:
        return self.diameter_result.value

    def policy_matrix(self, policy) -> np.ndarray:
        """State-to-state transition matrix under a stationary policy.

        ``policy`` is either a length-S action array or an ``(S, A)`` matrix
        of action probabilities.
        """
        policy = np.asarray(policy)
        if policy.ndim == 1:
            return self.kernel[np.arange(self.num_states), policy]
        return np.einsum("sa,sat->st", policy, self.kernel)


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    reach = np.eye(n, dtype=bool) | adj
    # repeated squaring of the reachability relation
    for _ in range(max(1, math.ceil(math.log2(max(n, 2))))):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    return bool(reach.all())


def _find_loop(kernel: np.ndarray):
    n, m = kernel.shape[:2]
    for s in range(n):
        for a in range(m):
            if kernel[s, a, s] == 1.0:
                return s, a
    return None


@dataclass(frozen=True)
class DiameterResult:
    value: float
    # hitting[s, t]: optimal expected first-passage time from s to t (0 on the diagonal)
    hitting: np.ndarray
    # goto[t]: stationary policy minimising expected time to reach t from every state
    goto: np.ndarray


def _proper_policy(mdp: StochasticMdp, target: int) -> np.ndarray:
    """A policy that reaches ``target`` with probability one, from BFS distances."""
    n = mdp.num_states
    dist = np.full(n, -1)
    dist[target] = 0
    frontier = [target]
    reach_any = mdp.kernel > 0
    while frontier:
        nxt = []
        for v in frontier:
            for s in range(n):
                if dist[s] < 0 and reach_any[s, :, v].any():
                    dist[s] = dist[v] + 1
                    nxt.append(s)
        frontier = nxt
    policy = np.zeros(n, dtype=np.int64)
    for s in range(n):
        if s == target:
            continue
        for a in range(mdp.num_actions):
            succ = np.flatnonzero(mdp.kernel[s, a] > 0)
            if np.any(dist[succ] == dist[s] - 1):
                policy[s] = a
                break
    return policy


def _hitting_times(mdp: StochasticMdp, target: int, max_iter: int = 10_000):
    """Policy iteration for the minimum expected first-passage time to ``target``."""
    n = mdp.num_states
    others = np.array([s for s in range(n) if s != target], dtype=np.int64)
    policy = _proper_policy(mdp, target)
    h = np.zeros(n)
    for _ in range(max_iter):
        p = mdp.policy_matrix(policy)[np.ix_(others, others)]
        h = np.zeros(n)
        h[others] = np.linalg.solve(np.eye(len(others)) - p, np.ones(len(others)))
        q = 1.0 + mdp.kernel @ h
        best = q.argmin(axis=1)
        # keep the incumbent action on ties so the iteration terminates
        stay = q[np.arange(n), policy] <= q[np.arange(n), best] + 1e-12
        new = np.where(stay, policy, best)
        new[target] = policy[target]
        if np.array_equal(new, policy):
            return h, policy
        policy = new
    raise CapExceeded("policy iteration did not converge")


def diameter(mdp: StochasticMdp) -> DiameterResult:
    """Max over ordered pairs ``s != s'`` of the optimal expected first-passage time."""
    n = mdp.num_states
    hitting = np.zeros((n, n))
    goto = np.zeros((n, n), dtype=np.int64)
    for target in range(n):
        h, pol = _hitting_times(mdp, target)
        hitting[:, target] = h
        goto[target] = pol
    off = ~np.eye(n, dtype=bool)
    value = float(hitting[off].max()) if n > 1 else 0.0
    if not np.isfinite(value):
        raise NotCommunicating("infinite first-passage time")
    hitting.setflags(write=False)
    goto.setflags(write=False)
    return DiameterResult(value, hitting, goto)


def hitting_time_pmf(mdp: StochasticMdp, policy, source: int, target: int, max_len: int) -> np.ndarray:
    """``pmf[l-1] = Pr[first visit to target happens after exactly l steps]``, l = 1..max_len."""
    p = mdp.policy_matrix(policy)
    dist = np.zeros(mdp.num_states)
    dist[source] = 1.0
    pmf = np.empty(max_len)
    for ell in range(max_len):
        dist = dist @ p
        pmf[ell] = dist[target]
        dist[target] = 0.0
    return pmf


@dataclass(frozen=True)
class CatchTarget:
    ell: int  # steps of the goto phase
    wait: int  # steps spent looping at the loop state first
    goto: np.ndarray  # stationary policy used after waiting
    p: float  # exact probability of first reaching the target at step ell_star


@dataclass(frozen=True)
class CatchingPlan:
    loop_state: int
    loop_action: int
    ell_star: int
    ceil_d: int
    targets: tuple[CatchTarget, ...]
    p_star: float

    def acceptance(self, target: int) -> float:
        return self.p_star / self.targets[target].p


def build_catching_plan(mdp: StochasticMdp) -> CatchingPlan:
    """Per-target waiting/goto policies that land on any state at a common time ``ell_star``.

    Raises:
        AssumptionViolated: if the MDP has no deterministic self-loop.
    """
    if mdp.loop_state is None:
        raise AssumptionViolated("no state with a deterministic self-loop action")
    star = mdp.loop_state
    res = mdp.diameter_result
    ceil_d = max(1, math.ceil(res.value - 1e-9))
    horizon = 2 * ceil_d
    chosen = {}
    for target in range(mdp.num_states):
        if target == star:
            continue
        pmf = hitting_time_pmf(mdp, res.goto[target], star, target, horizon)
        ell = int(np.argmax(pmf)) + 1
        chosen[target] = (ell, float(pmf[ell - 1]))
    ell_star = max((ell for ell, _ in chosen.values()), default=0)
    targets = []
    for target in range(mdp.num_states):
        if target == star:
            loop = np.full(mdp.num_states, mdp.loop_action, dtype=np.int64)
            targets.append(CatchTarget(0, ell_star, loop, 1.0))
            continue
        ell, p = chosen[target]
        if p < 1.0 / (4 * ceil_d):
            raise InvariantViolation(f"hit probability {p} for target {target} below 1/(4 ceil D)")
        targets.append(CatchTarget(ell, ell_star - ell, res.goto[target], p))
    p_star = min(t.p for t in targets)
    return CatchingPlan(star, mdp.loop_action, ell_star, ceil_d, tuple(targets), p_star)


def policy_state_distribution(mdp: StochasticMdp, policy, t: int) -> np.ndarray:
    """Distribution of the state at time ``t >= 1`` when ``policy`` is followed from the start."""
    if t < 1:
        raise ValueError("t must be >= 1")
    p = mdp.policy_matrix(policy)
    d = mdp.start_dist @ np.linalg.matrix_power(p, t - 1)
    if abs(d.sum() - 1.0) > DRIFT_TOL:
        raise InvariantViolation(f"state distribution drifted to total mass {d.sum()}")
    return d


def expected_policy_loss(mdp: StochasticMdp, policy, losses) -> tuple[float, np.ndarray]:
    """Exact expected loss of a stationary policy; returns ``(total, per_step)``."""
    losses = np.asarray(losses, dtype=float)
    policy = np.asarray(policy)
    p = mdp.policy_matrix(policy)
    if policy.ndim == 1:
        per_state = losses[:, np.arange(mdp.num_states), policy]
    else:
        per_state = np.einsum("tsa,sa->ts", losses, policy)
    d = mdp.start_dist.copy()
    per_step = np.empty(len(losses))
    for t in range(len(losses)):
        per_step[t] = d @ per_state[t]
        d = d @ p
    return float(per_step.sum()), per_step


def enumerate_policies(num_states: int, num_actions: int, cap: int = 2**16) -> np.ndarray:
    """All deterministic stationary policies in lexicographic order, shape ``(A**S, S)``."""
    count = num_actions**num_states
    if count > cap:
        raise CapExceeded(f"{count} policies exceeds the enumeration cap {cap}")
    return np.array(list(itertools.product(range(num_actions), repeat=num_states)), dtype=np.int64)


class PolicyBank:
    """Vectorised bookkeeping for every deterministic policy of an MDP.

    Tracks ``d_pi^t`` for all policies at the current time and converts a
    loss table into the per-policy expected losses at that time.
    """

    def __init__(self, mdp: StochasticMdp, cap: int = 2**16):
        self.mdp = mdp
        self.policies = enumerate_policies(mdp.num_states, mdp.num_actions, cap)
        n = mdp.num_states
        self.transitions = mdp.kernel[np.arange(n)[None, :], self.policies]
        self.reset()

    def __len__(self):
        return len(self.policies)

    def reset(self):
        self.t = 1
        self.dists = np.tile(self.mdp.start_dist, (len(self.policies), 1))

    def expected_losses(self, loss: np.ndarray) -> np.ndarray:
        """Per-policy expected loss at the current time."""
        rows = np.take_along_axis(loss[None, :, :], self.policies[:, :, None], axis=2)[:, :, 0]
        return np.einsum("ps,ps->p", self.dists, rows)

    def advance(self):
        self.dists = np.einsum("ps,pst->pt", self.dists, self.transitions)
        self.t += 1

    def index_of(self, policy) -> int:
        idx = 0
        for a in policy:
            idx = idx * self.mdp.num_actions + int(a)
        return idx

    def cumulative_losses(self, losses) -> np.ndarray:
        """Exact ``L^pi`` for every policy over a whole loss sequence (does not disturb state)."""
        saved = (self.t, self.dists)
        self.reset()
        total = np.zeros(len(self.policies))
        for loss in losses:
            total += self.expected_losses(loss)
            self.advance()
        self.t, self.dists = saved
        return total
