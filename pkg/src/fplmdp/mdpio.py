"""JSON MDP descriptions.

    {"states": n, "actions": m, "kind": "deterministic" | "stochastic",
     "next": [[...]]           (deterministic)
     "kernel": [[[...]]]       (stochastic; numbers or decimal strings)
     "start_dist": [...], "loop_state": s, "loop_action": a}

A deterministic MDP may give ``start_state`` instead of a point-mass ``start_dist``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InvalidMdp
from .graph import AdmdpGraph, build_admdp
from .stochastic import StochasticMdp

KEYS = {"states", "actions", "kind", "next", "kernel", "start_dist", "start_state", "loop_state", "loop_action"}


def _prob(x) -> float:
    if isinstance(x, str):
        return float(Fraction(x))
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise InvalidMdp(f"probability {x!r} is neither a number nor a decimal string")


def _probs(arr):
    if isinstance(arr, list):
        return [_probs(x) for x in arr]
    return _prob(arr)


@dataclass
class MdpFile:
    kind: str
    graph: AdmdpGraph | None
    mdp: StochasticMdp
    start_state: int | None


def parse_mdp(doc: dict) -> MdpFile:
    unknown = set(doc) - KEYS
    if unknown:
        raise InvalidMdp(f"unknown fields: {sorted(unknown)}")
    kind = doc.get("kind")
    n, m = doc.get("states"), doc.get("actions")
    if kind not in ("deterministic", "stochastic"):
        raise InvalidMdp(f"kind must be 'deterministic' or 'stochastic', got {kind!r}")
    start_dist = np.asarray(_probs(doc["start_dist"])) if "start_dist" in doc else None
    loop = (doc.get("loop_state"), doc.get("loop_action"))
    if kind == "deterministic":
        graph = build_admdp(doc["next"])
        start_state = doc.get("start_state")
        if start_state is None:
            if start_dist is None or np.count_nonzero(start_dist) != 1:
                raise InvalidMdp("a deterministic MDP needs start_state or a point-mass start_dist")
            start_state = int(np.flatnonzero(start_dist)[0])
        if start_dist is None:
            start_dist = np.eye(graph.num_states)[start_state]
        mdp = StochasticMdp.from_graph(graph, start_dist)
        if loop != (None, None):
            mdp = StochasticMdp(mdp.kernel, mdp.start_dist, *loop)
    else:
        graph, start_state = None, None
        if start_dist is None:
            raise InvalidMdp("stochastic MDP needs start_dist")
        mdp = StochasticMdp(np.asarray(_probs(doc["kernel"])), start_dist, *loop)
    if (n is not None and n != mdp.num_states) or (m is not None and m != mdp.num_actions):
        raise InvalidMdp(f"declared shape ({n}, {m}) does not match ({mdp.num_states}, {mdp.num_actions})")
    return MdpFile(kind, graph, mdp, start_state)


def load_mdp(path) -> MdpFile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidMdp(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_mdp(doc)


def dump_mdp(mdp: StochasticMdp, graph: AdmdpGraph | None = None, start_state: int | None = None) -> dict:
    doc = {"states": mdp.num_states, "actions": mdp.num_actions}
    if graph is not None:
        doc.update(kind="deterministic", next=graph.next.tolist())
    else:
        doc.update(kind="stochastic", kernel=mdp.kernel.tolist())
    if start_state is not None:
        doc["start_state"] = start_state
    else:
        doc["start_dist"] = mdp.start_dist.tolist()
    if mdp.loop_state is not None:
        doc.update(loop_state=mdp.loop_state, loop_action=mdp.loop_action)
    return doc
