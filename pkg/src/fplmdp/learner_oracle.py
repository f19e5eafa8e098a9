"""Oracle-efficient FPL under exploring starts.

The perturbation ``eps(s, a)`` is added to the first loss function, so the
perturbed objective of a policy is ``E[eps(s_1, a_1)] + L^pi`` and one call to
a best-policy oracle per step finds the leader.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from .fpl import TIE_TOL, LambdaMode, SwitchEstimate, _log_size
from .learner_stoch import run_stochastic
from .records import RunRecord
from .stochastic import PolicyBank, StochasticMdp


def oracle_lambda(mode: LambdaMode, num_states: int, num_actions: int, alpha: float, budget: float | None = None) -> float:
    if mode.kind == "fixed":
        return mode.value
    loss = {"horizon": mode.value, "first_order": mode.value}.get(mode.kind, budget)
    log_n = _log_size(num_states * num_actions)
    return min(math.sqrt(alpha * log_n / (num_states * loss)), alpha / (2 * num_states))


class EnumerationOracle:
    """Best stationary deterministic policy for a loss sequence, by enumeration.

    ``query(seq)`` returns ``(policy index, L^pi)`` for the sequence
    ``l_1..l_n`` (the first entry may exceed 1). Sequences are assumed to grow
    by appending; a call whose first or last cached entry is not the same
    object as before triggers a full recomputation. Ties go to the lowest
    index. Each call appends ``(n, digest, policy label)`` to ``trace``.
    """

    def __init__(self, mdp: StochasticMdp, cap: int = 2**16):
        self.mdp = mdp
        self.bank = PolicyBank(mdp, cap)
        self.trace: list[tuple[int, str, str]] = []
        self._reset()

    def _reset(self):
        self.bank.reset()
        self._seq: list = []
        self._total = np.zeros(len(self.bank))
        self._hash = hashlib.sha256()
        self._digest = self._hash.hexdigest()

    def _append(self, loss):
        loss = np.asarray(loss, dtype=float)
        self._total += self.bank.expected_losses(loss)
        self.bank.advance()
        self._hash.update(np.ascontiguousarray(loss).tobytes())
        self._seq.append(loss)

    def values(self, seq) -> np.ndarray:
        m = len(self._seq)
        if m and (len(seq) < m or seq[0] is not self._seq[0] or seq[m - 1] is not self._seq[m - 1]):
            self._reset()
            m = 0
        for loss in seq[m:]:
            self._append(loss)
        if len(seq) > m:
            self._digest = self._hash.copy().hexdigest()
        return self._total

    def query(self, seq) -> tuple[int, float]:
        total = self.values(seq)
        best = int(np.argmin(total))
        label = ".".join(map(str, self.bank.policies[best]))
        self.trace.append((len(seq), self._digest[:16], label))
        return best, float(total[best])


class OracleFpl:
    """Oracle-efficient expert layer: one oracle call per step on ``(eps + l_1, l_2, ..., l_t)``.

    Exposes the same surface as ``PolicyFpl`` so ``run_stochastic`` can drive it.
    """

    def __init__(self, mdp: StochasticMdp, alpha: float, lambda_mode: LambdaMode, seed=None, oracle=None, cap: int = 2**16):
        mdp.require_exploring_starts(alpha)
        self.mdp = mdp
        self.alpha = alpha
        self.mode = lambda_mode
        self.oracle = oracle if oracle is not None else EnumerationOracle(mdp, cap)
        self.bank = PolicyBank(mdp, cap)
        self.rng = np.random.default_rng(seed)
        self.seq: list[np.ndarray] = []
        self.raw: list[np.ndarray] = []
        self.t = 0
        self.switches = 0
        self.incurred = 0.0
        self.epoch = 0
        self._draw(self._rate(1.0))
        self.leader, _ = self.oracle.query(self.seq)

    def _rate(self, budget: float) -> float:
        return oracle_lambda(self.mode, self.mdp.num_states, self.mdp.num_actions, self.alpha, budget)

    def _draw(self, lam: float) -> None:
        self.lam = lam
        self.eps = self.rng.exponential(1.0 / lam, size=(self.mdp.num_states, self.mdp.num_actions))
        # a fresh first entry makes the oracle recompute from scratch
        first = self.eps + self.raw[0] if self.raw else self.eps
        self.seq = [first] + self.seq[1:]

    @property
    def policies(self) -> np.ndarray:
        return self.bank.policies

    def step(self, loss) -> tuple[int, bool]:
        loss = np.asarray(loss, dtype=float)
        self.incurred += float(self.bank.expected_losses(loss)[self.leader])
        self.bank.advance()
        self.raw.append(loss)
        if self.t == 0:
            self.seq = [self.eps + loss]
        else:
            self.seq.append(loss)
        self.t += 1
        if self.mode.kind == "doubling" and self.incurred > 2.0**self.epoch:
            while self.incurred > 2.0**self.epoch:
                self.epoch += 1
            self._draw(self._rate(2.0**self.epoch))
        best, value = self.oracle.query(self.seq)
        incumbent = self.oracle.values(self.seq)[self.leader]
        if incumbent <= value + TIE_TOL:
            return self.leader, False
        self.leader = best
        self.switches += 1
        return best, True


def run_oracle(mdp: StochasticMdp, losses, alpha: float, lambda_mode: LambdaMode, seed=None, cap: int = 2**16) -> RunRecord:
    """Same interaction loop as ``run_stochastic`` with the oracle expert layer.

    Raises:
        ExploringStartsViolated: if some state has start mass below ``alpha``.
    """
    fpl_seed = np.random.SeedSequence(seed).spawn(3)[2]
    expert = OracleFpl(mdp, alpha, lambda_mode, seed=fpl_seed, cap=cap)
    rec = run_stochastic(mdp, losses, lambda_mode, seed=seed, cap=cap, expert=expert, algo="oracle")
    rec.extra["alpha"] = alpha
    rec.extra["oracle_trace"] = expert.oracle.trace
    return rec


def estimate_oracle_switch_probability(mdp: StochasticMdp, losses, alpha: float, lam: float, trials: int = 10_000, seed=None, cap: int = 2**16) -> SwitchEstimate:
    """Monte-Carlo ``Pr[pi_{t+1} != pi_t]`` at ``t = len(losses)`` over perturbation redraws.

    The per-draw bound is ``(|S| / alpha) * lam * lhat_t(pi_t)``.
    """
    losses = np.asarray(losses, dtype=float)
    t = len(losses)
    bank = PolicyBank(mdp, cap)
    before = np.zeros(len(bank))
    for loss in losses[: t - 1]:
        before += bank.expected_losses(loss)
        bank.advance()
    last = bank.expected_losses(losses[t - 1])

    rng = np.random.default_rng(seed)
    n, m = mdp.num_states, mdp.num_actions
    eps = rng.exponential(1.0 / lam, size=(trials, n, m))
    weighted = eps * mdp.start_dist[None, :, None]
    cols = np.arange(n)
    pert = weighted[:, cols[None, :], bank.policies].sum(axis=2)  # (trials, policies)
    total = pert + before
    leader = total.argmin(axis=1)
    after = total + last
    rows = np.arange(trials)
    switched = (after[rows, leader] > after.min(axis=1) + TIE_TOL).astype(float)
    bounds = (n / alpha) * lam * last[leader]
    diff = switched - bounds
    per_leader = {}
    for idx in np.unique(leader):
        mask = leader == idx
        label = ".".join(map(str, bank.policies[idx]))
        per_leader[label] = (int(mask.sum()), float(switched[mask].mean()))
    return SwitchEstimate(
        float(switched.mean()),
        float(bounds.mean()),
        float(diff.mean()),
        float(diff.std(ddof=1) / math.sqrt(trials)),
        trials,
        per_leader,
    )
