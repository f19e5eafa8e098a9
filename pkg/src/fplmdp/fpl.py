"""Follow-the-perturbed-leader over closed-walk experts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import best_walk
from .cycle_opt import backward_values, best_cycle_overall, candidate_pairs, trace_choice
from .graph import AdmdpGraph, ClosedWalk

TIE_TOL = 1e-9


@dataclass(frozen=True)
class LambdaMode:
    """How the perturbation rate is chosen.

    kind is one of ``fixed`` (value = rate), ``horizon`` (value = T),
    ``first_order`` (value = L*, or an upper bound on it) and ``doubling``
    (value unused; the rate is retuned on a loss budget 1, 2, 4, ...).
    """

    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "horizon", "first_order", "doubling"):
            raise ValueError(f"unknown lambda mode {self.kind!r}")
        if self.kind != "doubling" and not self.value > 0:
            raise ValueError(f"lambda mode {self.kind!r} needs a positive value")

    @classmethod
    def parse(cls, spec, horizon: int | None = None) -> LambdaMode:
        """Accepts ``"horizon"``, ``"doubling"``, ``{"fixed": x}``, ``{"first_order": L}``."""
        if isinstance(spec, LambdaMode):
            return spec
        if spec == "horizon":
            return cls("horizon", float(horizon))
        if spec == "doubling":
            return cls("doubling")
        if isinstance(spec, dict) and len(spec) == 1:
            (kind, value), = spec.items()
            return cls(kind, float(value))
        raise ValueError(f"cannot parse lambda mode {spec!r}")


def _log_size(n: int) -> float:
    # a single expert would give log 1 = 0 and an infinite perturbation scale
    return math.log(max(n, 2))


def cycle_lambda(mode: LambdaMode, num_states: int, num_actions: int, budget: float | None = None) -> float:
    """Rate for the closed-walk learner."""
    log_n = _log_size(num_states * num_actions)
    if mode.kind == "fixed":
        return mode.value
    if mode.kind == "horizon":
        return log_n / math.sqrt(mode.value)
    loss = mode.value if mode.kind == "first_order" else budget
    return min(math.sqrt(log_n / loss), 1.0 / (4 * num_states))


@dataclass
class PerturbationSet:
    """Exponential(rate) draws: ``eps[i, s, a]`` per walk position and ``delta[s, k]`` per subproblem."""

    eps: np.ndarray
    delta: np.ndarray
    lam: float
    seed: int | None = None

    @classmethod
    def draw(cls, num_states: int, num_actions: int, lam: float, rng: np.random.Generator, seed=None) -> PerturbationSet:
        scale = 1.0 / lam
        eps = rng.exponential(scale, size=(num_states, num_states, num_actions))
        delta = rng.exponential(scale, size=(num_states, num_states + 1))
        delta[:, 0] = 0.0  # k = 0 is never a walk length
        return cls(eps, delta, lam, seed)

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> PerturbationSet:
        return cls(
            np.zeros((num_states, num_states, num_actions)),
            np.zeros((num_states, num_states + 1)),
            math.inf,
        )


class LeaderSearch:
    """Perturbed-leader computation over every admissible ``(s, k)`` using the layered recursion."""

    def __init__(self, graph: AdmdpGraph, start_class: int):
        self.graph = graph
        groups: dict[int, list[int]] = {}
        for s, k in candidate_pairs(graph, start_class):
            groups.setdefault(k, []).append(s)
        self.groups = {k: np.array(ss, dtype=np.int64) for k, ss in groups.items()}

    def empty_folds(self) -> dict[int, np.ndarray]:
        g = self.graph
        return {k: np.zeros((k, g.num_states, g.num_actions)) for k in self.groups}

    def solve_raw(self, folds, pert: PerturbationSet):
        """``(value, start, actions)`` of the perturbed leader, without building a walk."""
        best = (math.inf, -1, -1, None)
        for k, starts in self.groups.items():
            value, i, actions = best_walk(self.graph.next, starts, folds[k] + pert.eps[:k], pert.delta[starts, k])
            if value < best[0] or (value == best[0] and (starts[i], k) < (best[1], best[2])):
                best = (value, int(starts[i]), k, actions)
        return float(best[0]), best[1], best[3]

    def solve(self, folds, pert: PerturbationSet) -> tuple[float, ClosedWalk]:
        value, s, actions = self.solve_raw(folds, pert)
        return value, ClosedWalk.from_actions(self.graph, s, actions.tolist())

    def solve_reference(self, folds, pert: PerturbationSet) -> tuple[float, ClosedWalk]:
        """Same as ``solve`` using the vectorised numpy recursion."""
        best = (math.inf, -1, -1, None)
        for k, starts in self.groups.items():
            values, choice = backward_values(self.graph.next, starts, folds[k] + pert.eps[:k])
            values = values + pert.delta[starts, k]
            i = int(np.argmin(values))
            if values[i] < best[0] or (values[i] == best[0] and (starts[i], k) < (best[1], best[2])):
                best = (float(values[i]), int(starts[i]), k, choice[:, i])
        value, s, _, choice_i = best
        return value, ClosedWalk.from_actions(self.graph, s, trace_choice(self.graph.next, s, choice_i))

    @staticmethod
    def objective(walk: ClosedWalk, folds, pert: PerturbationSet) -> float:
        k = walk.length
        coef = folds[k]
        total = pert.delta[walk.start, k]
        for p in range(k):
            u, a = walk.states[p], walk.actions[p]
            total += coef[p, u, a] + pert.eps[p, u, a]
        return float(total)


@dataclass
class FplState:
    """Mutable state of the closed-walk FPL learner.

    ``t`` counts the loss functions received so far; ``leader`` is ``C_{t+1}``.
    """

    leader: ClosedWalk
    t: int = 0
    switches: int = 0
    incurred: float = 0.0
    epoch: int = 0
    lam: float = 0.0


class CycleFpl:
    """Follow the perturbed leader with one expert per closed walk of length <= |S|.

    Args:
        graph: the deterministic MDP.
        start_state: environment start state; experts start in its cycle class.
        lambda_mode: a ``LambdaMode``.
        seed: seed for the perturbation stream.
        method: ``"dp"`` (layered recursion) or ``"lp"`` (LP + walk extraction).
    """

    def __init__(self, graph: AdmdpGraph, start_state: int, lambda_mode: LambdaMode, seed=None, method: str = "dp"):
        self.graph = graph
        self.start_state = start_state
        self.mode = lambda_mode
        self.method = method
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.search = LeaderSearch(graph, int(graph.classes[start_state]))
        self.folds = self.search.empty_folds()
        self.losses: list[np.ndarray] = []
        self.state = FplState(leader=None)
        self._draw(self._rate(budget=1.0))
        self.state.leader = self._solve()[1]()

    def _rate(self, budget: float) -> float:
        return cycle_lambda(self.mode, self.graph.num_states, self.graph.num_actions, budget)

    def _draw(self, lam: float) -> None:
        g = self.graph
        self.perturbations = PerturbationSet.draw(g.num_states, g.num_actions, lam, self.rng, self.seed)
        self.state.lam = lam

    def _solve(self):
        """``(value, walk factory)``; the walk is only materialised on a switch."""
        if self.method == "dp":
            value, s, actions = self.search.solve_raw(self.folds, self.perturbations)
            return value, lambda: ClosedWalk.from_actions(self.graph, s, actions.tolist())
        g = self.graph
        losses = np.array(self.losses) if self.losses else np.zeros((0, g.num_states, g.num_actions))
        best = best_cycle_overall(g, losses, self.perturbations, int(g.classes[self.start_state]), method=self.method)
        return best.value, lambda: best.walk

    @property
    def leader(self) -> ClosedWalk:
        return self.state.leader

    @property
    def switches(self) -> int:
        return self.state.switches

    def objective(self, walk: ClosedWalk) -> float:
        return LeaderSearch.objective(walk, self.folds, self.perturbations)

    def step(self, loss: np.ndarray) -> tuple[ClosedWalk, bool]:
        """Feed ``l_t`` and return ``(C_{t+1}, switched)``."""
        st = self.state
        loss = np.asarray(loss, dtype=float)
        t = st.t + 1
        c = st.leader
        st.incurred += loss[c.state_at(t), c.action_at(t)]
        for k, table in self.folds.items():
            table[(t - 1) % k] += loss
        if self.method != "dp":
            self.losses.append(loss)
        st.t = t

        if self.mode.kind == "doubling" and st.incurred > 2.0**st.epoch:
            while st.incurred > 2.0**st.epoch:
                st.epoch += 1
            self._draw(self._rate(budget=2.0**st.epoch))

        value, make_walk = self._solve()
        if self.objective(c) <= value + TIE_TOL:
            return c, False
        walk = make_walk()
        st.leader = walk
        st.switches += 1
        return walk, True


@dataclass(frozen=True)
class SwitchEstimate:
    """Monte-Carlo estimate of the one-step switch probability against its bound.

    ``bound`` is the mean over draws of ``(|S|+1) * lam * l_t(s_t(C_t), a_t(C_t))``;
    ``margin`` is the mean of (switch indicator - per-draw bound) and
    ``sigma`` its standard error.
    """

    probability: float
    bound: float
    margin: float
    sigma: float
    trials: int
    per_leader: dict

    @property
    def within_bound(self) -> bool:
        return self.margin <= 3.0 * self.sigma


def estimate_switch_probability(graph: AdmdpGraph, losses, lam: float, trials: int = 10_000, start_state: int = 0, seed=None) -> SwitchEstimate:
    """Empirical ``Pr[C_{t+1} != C_t]`` at ``t = len(losses)`` over fresh perturbation draws.

    ``losses`` holds ``l_1..l_t``; the leader at time ``t`` sees ``l_1..l_{t-1}``.
    """
    losses = np.asarray(losses, dtype=float)
    t = len(losses)
    search = LeaderSearch(graph, int(graph.classes[start_state]))
    before = search.empty_folds()
    for k, table in before.items():
        for j in range(t - 1):
            table[j % k] += losses[j]
    after = {k: table.copy() for k, table in before.items()}
    for k, table in after.items():
        table[(t - 1) % k] += losses[t - 1]

    rng = np.random.default_rng(seed)
    switched = np.zeros(trials)
    bounds = np.zeros(trials)
    per_leader: dict[str, list[int]] = {}
    factor = (graph.num_states + 1) * lam
    for i in range(trials):
        pert = PerturbationSet.draw(graph.num_states, graph.num_actions, lam, rng)
        _, c = search.solve(before, pert)
        value, _ = search.solve(after, pert)
        moved = LeaderSearch.objective(c, after, pert) > value + TIE_TOL
        switched[i] = moved
        bounds[i] = factor * losses[t - 1, c.state_at(t), c.action_at(t)]
        counts = per_leader.setdefault(c.label, [0, 0])
        counts[0] += 1
        counts[1] += int(moved)
    diff = switched - bounds
    sigma = float(diff.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    return SwitchEstimate(
        float(switched.mean()),
        float(bounds.mean()),
        float(diff.mean()),
        sigma,
        trials,
        {label: (n, k / n) for label, (n, k) in per_leader.items()},
    )
