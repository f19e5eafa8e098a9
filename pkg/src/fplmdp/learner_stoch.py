"""Learner for communicating MDPs with a self-loop state.

Runs FPL with one expert per stationary deterministic policy, fed with the
exact expected losses of each policy, and uses a catching routine to land in
the new leader's state distribution after every switch.
"""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .errors import AssumptionViolated, NonTermination
from .fpl import TIE_TOL, LambdaMode, _log_size
from .records import RunRecord
from .stochastic import CatchingPlan, PolicyBank, StochasticMdp, build_catching_plan, policy_state_distribution


def policy_lambda(mode: LambdaMode, num_policies: int, budget: float | None = None) -> float:
    log_n = _log_size(num_policies)
    if mode.kind == "fixed":
        return mode.value
    if mode.kind == "horizon":
        return math.sqrt(log_n / mode.value)
    loss = mode.value if mode.kind == "first_order" else budget
    return min(math.sqrt(log_n / loss), 0.5)


class PolicyFpl:
    """FPL over all ``|A|**|S|`` policies with one Exponential(rate) perturbation each.

    ``t`` counts the loss functions received; ``leader`` is the policy index
    for time ``t + 1``.
    """

    def __init__(self, mdp: StochasticMdp, lambda_mode: LambdaMode, seed=None, cap: int = 2**16):
        self.mdp = mdp
        self.bank = PolicyBank(mdp, cap)
        self.mode = lambda_mode
        self.rng = np.random.default_rng(seed)
        self.cumulative = np.zeros(len(self.bank))
        self.t = 0
        self.switches = 0
        self.incurred = 0.0
        self.epoch = 0
        self._draw(self._rate(1.0))
        self.leader = int(np.argmin(self.perturbation + self.cumulative))

    def _rate(self, budget: float) -> float:
        return policy_lambda(self.mode, len(self.bank), budget)

    def _draw(self, lam: float) -> None:
        self.lam = lam
        self.perturbation = self.rng.exponential(1.0 / lam, size=len(self.bank))

    @property
    def policies(self) -> np.ndarray:
        return self.bank.policies

    def leader_policy(self) -> np.ndarray:
        return self.bank.policies[self.leader]

    def step(self, loss: np.ndarray) -> tuple[int, bool]:
        """Feed ``l_t``; return ``(leader index for t + 1, switched)``."""
        expected = self.bank.expected_losses(np.asarray(loss, dtype=float))
        self.incurred += expected[self.leader]
        self.cumulative += expected
        self.bank.advance()
        self.t += 1
        if self.mode.kind == "doubling" and self.incurred > 2.0**self.epoch:
            while self.incurred > 2.0**self.epoch:
                self.epoch += 1
            self._draw(self._rate(2.0**self.epoch))
        total = self.perturbation + self.cumulative
        best = int(np.argmin(total))
        if total[self.leader] <= total[best] + TIE_TOL:
            return self.leader, False
        self.leader = best
        self.switches += 1
        return best, True


class _Uniforms:
    """Buffered U(0, 1) draws from a generator (scalar draws are slow)."""

    def __init__(self, rng: np.random.Generator, size: int = 4096):
        self.rng = rng
        self.size = size
        self.buf = rng.random(size)
        self.i = 0

    def __call__(self) -> float:
        if self.i == self.size:
            self.buf = self.rng.random(self.size)
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u


def sample_index(cdf: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, len(cdf) - 1)


class Environment:
    """Samples transitions of an MDP with a seeded generator."""

    def __init__(self, mdp: StochasticMdp, rng: np.random.Generator):
        self.mdp = mdp
        self.uniform = _Uniforms(rng)
        self.cdf = np.cumsum(mdp.kernel, axis=2)
        self.start_cdf = np.cumsum(mdp.start_dist)

    def reset(self) -> int:
        return sample_index(self.start_cdf, self.uniform())

    def step(self, s: int, a: int) -> int:
        return sample_index(self.cdf[s, a], self.uniform())


class Catcher:
    """Switch_Policy as a per-step state machine so it can be preempted.

    ``target_dist(tau)`` must return the target policy's state distribution
    at absolute time ``tau``. Call ``act(t, s)`` for the action at time ``t``
    in state ``s``, then ``observe(s_next)`` with the resulting state; the
    latter returns True once the learner has been caught up, i.e. the state at
    time ``t + 1`` is distributed as ``target_dist(t + 1)``.

    An attempt starts at the loop state: a target is drawn for time
    ``t + ell_star``, the learner waits, then follows the goto policy. The
    attempt fails if the target is reached early or missed; on a landing it
    is accepted with probability ``p_star / p_target``.
    """

    def __init__(self, mdp: StochasticMdp, plan: CatchingPlan, target_dist: Callable[[int], np.ndarray], uniform: Callable[[], float]):
        self.mdp = mdp
        self.plan = plan
        self.target_dist = target_dist
        self.uniform = uniform
        self.nav = mdp.diameter_result.goto[plan.loop_state]
        self.target = None
        self.steps = 0
        self.attempts = 0

    def act(self, t: int, s: int) -> int:
        plan = self.plan
        if self.target is None:
            if s != plan.loop_state:
                return int(self.nav[s])
            cdf = np.cumsum(self.target_dist(t + plan.ell_star))
            self.target = sample_index(cdf, self.uniform())
            self.j = 0
            self.attempts += 1
        info = plan.targets[self.target]
        if self.j < info.wait:
            return plan.loop_action
        return int(info.goto[s])

    def observe(self, s_next: int) -> bool:
        self.steps += 1
        if self.target is None:
            return False
        self.j += 1
        target = self.target
        if self.j < self.plan.ell_star:
            if self.j > self.plan.targets[target].wait and s_next == target:
                self.target = None  # reached too early
            return False
        self.target = None
        if s_next != target:
            return False
        return self.uniform() < self.plan.acceptance(target)


def switch_policy(mdp: StochasticMdp, plan: CatchingPlan, policy, t0: int, state: int, rng: np.random.Generator, max_steps: int | None = None):
    """Run the catching routine to completion from ``state`` at time ``t0``.

    Returns ``(T_switch, trajectory)`` where the trajectory lists the
    ``(t, state, action)`` steps taken; the state at ``T_switch`` is
    distributed as the policy's state distribution at that time.

    Raises:
        NonTermination: after ``10**4 * ceil(D)**2`` steps (default cap).
    """
    env = Environment(mdp, rng)
    if max_steps is None:
        max_steps = 10**4 * plan.ceil_d**2
    cache: dict[int, np.ndarray] = {}

    def dist(tau):
        if tau not in cache:
            cache[tau] = policy_state_distribution(mdp, policy, tau)
        return cache[tau]

    if plan.ell_star == 0:
        return t0, []
    catcher = Catcher(mdp, plan, dist, env.uniform)
    t, s = t0, state
    trajectory = []
    while True:
        a = catcher.act(t, s)
        trajectory.append((t, s, a))
        s = env.step(s, a)
        t += 1
        if catcher.observe(s):
            return t, trajectory
        if len(trajectory) >= max_steps:
            raise NonTermination(f"catching did not finish within {max_steps} steps")


def catch_samples(mdp: StochasticMdp, plan: CatchingPlan, policy, t0: int, trials: int, seed=None, state: int | None = None):
    """Draw ``(T_switch, S_{T_switch})`` pairs from independent catching runs.

    Without ``state`` each run starts at the loop state.
    """
    rng = np.random.default_rng(seed)
    env = Environment(mdp, rng)
    start = plan.loop_state if state is None else state
    max_t = t0 + 10**4 * plan.ceil_d**2
    p = mdp.policy_matrix(policy)
    # d_pi^tau for every reachable tau, built once
    dists = [None, mdp.start_dist.copy()]
    times = np.empty(trials, dtype=np.int64)
    landed = np.empty(trials, dtype=np.int64)

    def dist(tau):
        while len(dists) <= tau:
            dists.append(dists[-1] @ p)
        return dists[tau]

    for i in range(trials):
        catcher = Catcher(mdp, plan, dist, env.uniform)
        t, s = t0, start
        while True:
            a = catcher.act(t, s)
            s = env.step(s, a)
            t += 1
            if catcher.observe(s):
                break
            if t > max_t:
                raise NonTermination("catching did not finish")
        times[i] = t
        landed[i] = s
    return times, landed, dist


def expected_catch_time_stats(mdp: StochasticMdp, plan: CatchingPlan, policy, t0: int = 1, trials: int = 1000, seed=None, state: int | None = None):
    """Monte-Carlo ``(mean, standard error)`` of ``T_switch - t0``."""
    times, _, _ = catch_samples(mdp, plan, policy, t0, trials, seed, state)
    delays = times - t0
    return float(delays.mean()), float(delays.std(ddof=1) / math.sqrt(trials))


class ExpectedLossTracker:
    """Exact expectation over transitions of the learner's per-step loss.

    Given the perturbation draw, the leader sequence does not depend on the
    sampled states, so the learner is a time-inhomogeneous Markov chain on
    (state, mode) where mode is following, navigating to the loop state, or
    attempt ``(target, j)``. Its law is propagated forward step by step.
    Catching mass below ``SETTLED`` is treated as caught.
    """

    SETTLED = 1e-15

    def __init__(self, mdp: StochasticMdp, plan: CatchingPlan | None):
        self.mdp = mdp
        self.plan = plan
        n = mdp.num_states
        self.states = np.arange(n)
        self.follow = mdp.start_dist.copy()
        self.total = 0.0
        self.active = False
        if plan is not None:
            ell = plan.ell_star
            self.nav = np.zeros(n)
            self.attempt = np.zeros((n, ell, n))  # [target, j, state]
            nav_policy = mdp.diameter_result.goto[plan.loop_state]
            self.nav_kernel = mdp.kernel[self.states, nav_policy]
            self.nav_loss = nav_policy
            acts = np.empty((n, ell, n), dtype=np.int64)
            for g, tg in enumerate(plan.targets):
                for j in range(ell):
                    acts[g, j] = plan.loop_action if j < tg.wait else tg.goto
            self.acts = acts
            self.att_kernel = mdp.kernel[self.states[None, None, :], acts]  # [g, j, s, s']
            # after the move from j to j + 1: hitting the target early aborts the attempt
            wait = np.array([tg.wait for tg in plan.targets])
            self.early = (np.arange(1, ell)[None, :] > wait[:, None])  # [g, j + 1 < ell]
            self.accept = np.array([plan.acceptance(g) for g in range(n)])

    def step(self, loss: np.ndarray, policy: np.ndarray, target_dist: Callable[[], np.ndarray] | None) -> float:
        """Account for time ``t`` under the current leader ``policy``; returns its expected loss.

        ``target_dist()`` gives the law of the target drawn when an attempt starts now.
        """
        states = self.states
        expected = float(self.follow @ loss[states, policy])
        new_follow = self.follow @ self.mdp.kernel[states, policy]
        if self.active:
            plan = self.plan
            n = len(states)
            star = plan.loop_state
            if self.nav[star] > 0:
                self.attempt[:, 0, star] += self.nav[star] * target_dist()
                self.nav[star] = 0.0
            expected += float(self.nav @ loss[states, self.nav_loss])
            expected += float((self.attempt * loss[states[None, None, :], self.acts]).sum())
            new_nav = self.nav @ self.nav_kernel
            nxt = np.einsum("gjs,gjst->gjt", self.attempt, self.att_kernel)
            new_attempt = np.zeros_like(self.attempt)
            new_attempt[:, 1:] = nxt[:, :-1]
            diag = new_attempt[np.arange(n), 1:, np.arange(n)]  # [g, j] mass sitting on its target
            aborted = np.where(self.early, diag, 0.0)
            new_attempt[np.arange(n), 1:, np.arange(n)] = diag - aborted
            new_nav += np.bincount(np.arange(n), weights=aborted.sum(axis=1), minlength=n)
            last = nxt[:, -1].copy()
            landed = last[np.arange(n), np.arange(n)]
            new_follow += landed * self.accept
            last[np.arange(n), np.arange(n)] = landed * (1.0 - self.accept)
            new_nav += last.sum(axis=0)
            self.attempt, self.nav = new_attempt, new_nav
            if self.nav.sum() + self.attempt.sum() < self.SETTLED:
                new_follow += self.nav + self.attempt.sum(axis=(0, 1))
                self.nav[:] = 0.0
                self.attempt[:] = 0.0
                self.active = False
        self.follow = new_follow
        self.total += expected
        return expected

    def restart(self) -> None:
        """The leader changed: every path starts a fresh catching routine."""
        self.nav = self.follow + self.nav + self.attempt.sum(axis=(0, 1))
        self.attempt[:] = 0.0
        self.follow = np.zeros_like(self.nav)
        self.active = True


def policy_label(policy) -> str:
    return ".".join(str(int(a)) for a in policy)


def run_stochastic(mdp: StochasticMdp, losses, lambda_mode: LambdaMode, seed=None, cap: int = 2**16, expert=None, algo: str = "stoch") -> RunRecord:
    """Interact for ``len(losses)`` steps, sampling transitions from the MDP.

    ``expert`` replaces the policy-FPL expert algorithm (it must expose
    ``leader``, ``policies``, ``bank`` and ``step``); the oracle learner uses this.

    When every action induces the same transition row the state process does
    not depend on the learner at all, so it is already distributed as any
    policy's state distribution and no catching is needed; otherwise a loop
    state is required.
    """
    losses = np.asarray(losses, dtype=float)
    horizon = len(losses)
    clock = time.perf_counter()
    fpl_seed, env_seed = np.random.SeedSequence(seed).spawn(2)
    fpl = expert if expert is not None else PolicyFpl(mdp, lambda_mode, seed=fpl_seed, cap=cap)
    env = Environment(mdp, np.random.default_rng(env_seed))
    needs_catch = not mdp.action_independent
    plan = None
    if needs_catch:
        if mdp.loop_state is None:
            raise AssumptionViolated("catching requires a state with a deterministic self-loop")
        plan = build_catching_plan(mdp)
        jump = {}

    def target_dist_for(index):
        def dist(tau):
            # the bank holds d^t for every policy at the current time t
            steps = tau - fpl.bank.t
            if (index, steps) not in jump:
                jump[index, steps] = np.linalg.matrix_power(fpl.bank.transitions[index], steps)
            return fpl.bank.dists[index] @ jump[index, steps]
        return dist

    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    incurred = np.empty(horizon)
    catching = np.zeros(horizon, dtype=bool)
    switch = np.zeros(horizon, dtype=bool)
    leaders = [None] * horizon
    labels = {}

    leader = fpl.leader
    policies = fpl.policies
    tracker = ExpectedLossTracker(mdp, plan)
    s = env.reset()
    catcher = None
    for i in range(horizon):
        t = i + 1
        tracker.step(losses[i], policies[leader], (lambda: target_dist_for(leader)(t + plan.ell_star)) if needs_catch else None)
        if catcher is not None:
            a = catcher.act(t, s)
            catching[i] = True
        else:
            a = int(policies[leader, s])
        states[i] = s
        actions[i] = a
        incurred[i] = losses[i, s, a]
        if leader not in labels:
            labels[leader] = policy_label(policies[leader])
        leaders[i] = labels[leader]
        s_next = env.step(s, a)
        if catcher is not None and catcher.observe(s_next):
            catcher = None
        new, switched = fpl.step(losses[i])
        if switched:
            switch[i] = True
            leader = new
            if needs_catch:
                catcher = Catcher(mdp, plan, target_dist_for(leader), env.uniform)
                tracker.restart()
        s = s_next

    lstar = float(fpl.bank.cumulative_losses(losses).min())
    rec = RunRecord(algo, seed, states, actions, incurred, leaders, catching, switch, lstar=lstar,
                    wall_time=time.perf_counter() - clock)
    rec.extra["lambda"] = fpl.lam
    rec.extra["expected_fpl_loss"] = fpl.incurred
    # learner's loss averaged over transitions, perturbations held fixed
    rec.extra["expected_loss"] = tracker.total
    rec.extra["expected_regret"] = tracker.total - lstar
    return rec
