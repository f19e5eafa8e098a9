"""Oblivious loss sequences and instance generators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadShape, InvariantViolation, NotStronglyConnected, NotCommunicating
from .graph import AdmdpGraph, build_admdp
from .stochastic import StochasticMdp

KINDS = ("iid_uniform", "bernoulli_experts_lb", "edge_punisher", "constant", "file")


@dataclass(frozen=True)
class AdversarySpec:
    """``kind`` plus its parameters.

    constant: ``value`` (scalar or an S x A table).
    edge_punisher: ``edges`` (list of ``[s, a]`` always charged 1) and/or
    ``period``: the charged action at state ``s`` is ``((t - 1) // period + s) mod A``.
    file: ``path`` to a ``.npy`` or JSON array of shape (T, S, A).
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary {self.kind!r}")


def check_range(losses: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(losses)) or losses.min(initial=0.0) < 0 or losses.max(initial=0.0) > 1:
        raise InvariantViolation("losses must lie in [0, 1]")
    return losses


def make_losses(spec: AdversarySpec, num_states: int, num_actions: int, horizon: int) -> np.ndarray:
    """The whole sequence ``l_1..l_T`` as a (T, S, A) array."""
    shape = (horizon, num_states, num_actions)
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    if spec.kind == "iid_uniform":
        losses = rng.random(shape)
    elif spec.kind == "bernoulli_experts_lb":
        losses = rng.integers(0, 2, size=shape).astype(float)
    elif spec.kind == "constant":
        losses = np.broadcast_to(np.asarray(p.get("value", 0.0), dtype=float), shape).copy()
    elif spec.kind == "edge_punisher":
        losses = np.zeros(shape)
        for s, a in p.get("edges", []):
            losses[:, s, a] = 1.0
        if "period" in p:
            t = np.arange(horizon)[:, None]
            hit = (t // int(p["period"]) + np.arange(num_states)[None, :]) % num_actions
            losses[np.arange(horizon)[:, None], np.arange(num_states)[None, :], hit] = 1.0
    else:
        path = Path(p["path"])
        data = np.load(path) if path.suffix == ".npy" else np.asarray(json.loads(path.read_text()), dtype=float)
        if data.ndim != 3 or data.shape[1:] != (num_states, num_actions) or len(data) < horizon:
            raise BadShape(f"loss file has shape {data.shape}, need ({horizon}, {num_states}, {num_actions})")
        losses = np.array(data[:horizon], dtype=float)
    return check_range(losses)


def gen_lower_bound_instance(num_states: int, num_actions: int, horizon: int, seed=None):
    """Cycle MDP where every action advances, with i.i.d. Bernoulli(1/2) losses.

    Raises:
        BadShape: unless ``num_states > 3`` and ``num_actions >= 1``.
    """
    if num_states <= 3 or num_actions < 1:
        raise BadShape(f"lower-bound instance needs |S| > 3 and |A| >= 1, got {num_states}, {num_actions}")
    nxt = np.tile((np.arange(num_states) + 1)[:, None] % num_states, (1, num_actions))
    graph = build_admdp(nxt)
    losses = make_losses(AdversarySpec("bernoulli_experts_lb", seed=seed), num_states, num_actions, horizon)
    return graph, losses


def random_admdp(num_states: int, num_actions: int, rng: np.random.Generator, tries: int = 1000) -> AdmdpGraph:
    """Uniformly random next-state table, redrawn until strongly connected."""
    for _ in range(tries):
        nxt = rng.integers(0, num_states, size=(num_states, num_actions))
        try:
            return build_admdp(nxt)
        except NotStronglyConnected:
            continue
    raise NotStronglyConnected("no strongly connected draw found")


def random_communicating_mdp(num_states: int, num_actions: int, rng: np.random.Generator, loop: bool = True,
                             support: int = 2, start_dist=None, tries: int = 1000) -> StochasticMdp:
    """Random sparse kernel; with ``loop`` state 0 gets a deterministic self-loop on action 0."""
    if loop and num_actions < 2 and num_states > 1:
        raise BadShape("a self-loop state needs a second action to leave it")
    for _ in range(tries):
        kernel = np.zeros((num_states, num_actions, num_states))
        for s in range(num_states):
            for a in range(num_actions):
                succ = rng.choice(num_states, size=min(support, num_states), replace=False)
                kernel[s, a, succ] = rng.dirichlet(np.ones(len(succ)))
        if loop:
            kernel[0, 0] = 0.0
            kernel[0, 0, 0] = 1.0
        start = np.full(num_states, 1.0 / num_states) if start_dist is None else start_dist
        try:
            return StochasticMdp(kernel, start)
        except NotCommunicating:
            continue
    raise NotCommunicating("no communicating draw found")


def geometric_gadget(q: float) -> StochasticMdp:
    """Three states: 0 loops (action 0) or moves to 1 (action 1); 1 reaches 2 w.p. ``q``
    and otherwise falls back to 0; 2 returns to 0.

    For a target policy that stays at state 0, every catching attempt lasts
    two steps, ends back at state 0 and succeeds with probability ``q``, so
    the catch time from state 0 is twice a Geometric(q) variable.
    """
    kernel = np.zeros((3, 2, 3))
    kernel[0, 0, 0] = 1.0
    kernel[0, 1, 1] = 1.0
    kernel[1, :, 2] = q
    kernel[1, :, 0] = 1.0 - q
    kernel[2, :, 0] = 1.0
    return StochasticMdp(kernel, [1.0, 0.0, 0.0], loop_state=0, loop_action=0)
