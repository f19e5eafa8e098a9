import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import draw_graph
from fplmdp.cycle_opt import best_cycle_overall
from fplmdp.fpl import (
    CycleFpl,
    LambdaMode,
    LeaderSearch,
    PerturbationSet,
    cycle_lambda,
    estimate_switch_probability,
)
from fplmdp.graph import build_admdp


def test_lambda_modes():
    assert cycle_lambda(LambdaMode("fixed", 0.3), 4, 2) == 0.3
    assert cycle_lambda(LambdaMode("horizon", 100), 4, 2) == pytest.approx(math.log(8) / 10)
    assert cycle_lambda(LambdaMode("first_order", 1e6), 4, 2) == pytest.approx(math.sqrt(math.log(8) / 1e6))
    assert cycle_lambda(LambdaMode("first_order", 1.0), 4, 2) == pytest.approx(1 / 16)
    assert LambdaMode.parse("horizon", 64) == LambdaMode("horizon", 64.0)
    assert LambdaMode.parse({"fixed": 0.5}) == LambdaMode("fixed", 0.5)
    with pytest.raises(ValueError):
        LambdaMode.parse("sometimes")


def test_perturbation_shapes():
    p = PerturbationSet.draw(3, 2, 0.5, np.random.default_rng(0))
    assert p.eps.shape == (3, 3, 2) and p.delta.shape == (3, 4)
    assert np.all(p.delta[:, 0] == 0) and np.all(p.eps > 0)


def test_zero_losses_never_switch():
    g = build_admdp([[1, 2], [2, 0], [0, 1]])
    fpl = CycleFpl(g, 0, LambdaMode("fixed", 0.1), seed=3)
    for _ in range(50):
        _, switched = fpl.step(np.zeros((3, 2)))
        assert not switched


def test_large_lambda_follows_unperturbed_leader():
    g = build_admdp([[1, 1], [0, 0]])
    fpl = CycleFpl(g, 0, LambdaMode("fixed", 1e12), seed=0)
    loss = np.zeros((2, 2))
    loss[0, 0] = 1.0
    leader, _ = fpl.step(loss)
    assert leader.actions[0] == 1


@given(st.integers(0, 10**6))
def test_compiled_search_matches_reference_and_lp(seed):
    rng = np.random.default_rng(seed)
    g = draw_graph(rng, max_states=4)
    search = LeaderSearch(g, 0)
    folds = search.empty_folds()
    losses = rng.random((int(rng.integers(1, 9)), g.num_states, g.num_actions))
    for k, table in folds.items():
        for j, loss in enumerate(losses):
            table[j % k] += loss
    pert = PerturbationSet.draw(g.num_states, g.num_actions, 0.7, rng)
    v1, c1 = search.solve(folds, pert)
    v2, c2 = search.solve_reference(folds, pert)
    assert v1 == pytest.approx(v2, abs=1e-9)
    assert LeaderSearch.objective(c1, folds, pert) == pytest.approx(v1, abs=1e-9)
    assert best_cycle_overall(g, losses, pert, 0, method="lp").value == pytest.approx(v1, abs=1e-6)


def test_dp_and_lp_learners_agree():
    rng = np.random.default_rng(5)
    g = build_admdp([[1, 2], [2, 0], [0, 1]])
    a = CycleFpl(g, 0, LambdaMode("fixed", 0.2), seed=9, method="dp")
    b = CycleFpl(g, 0, LambdaMode("fixed", 0.2), seed=9, method="lp")
    for _ in range(25):
        loss = rng.random((3, 2))
        (ca, sa), (cb, sb) = a.step(loss), b.step(loss)
        assert a.objective(ca) == pytest.approx(b.objective(cb), abs=1e-6)


def test_frozen_trajectory():
    # values recorded from the reference implementation
    rng = np.random.default_rng(2024)
    g = build_admdp([[1, 2], [2, 0], [0, 1]])
    fpl = CycleFpl(g, 0, LambdaMode("fixed", 1.0), seed=11)
    for _ in range(200):
        fpl.step(rng.random((3, 2)))
    assert (fpl.switches, fpl.leader.label) == (26, "0:1.1.1")
    assert fpl.state.incurred == pytest.approx(101.085075, abs=1e-6)


def test_doubling_epochs_advance():
    g = build_admdp([[1, 1], [0, 0]])
    fpl = CycleFpl(g, 0, LambdaMode("doubling"), seed=1)
    for _ in range(64):
        fpl.step(np.ones((2, 2)))
    assert fpl.state.epoch == 6 and fpl.state.lam == pytest.approx(min(math.sqrt(math.log(4) / 64), 1 / 8))


def test_switch_estimate_reports_margin():
    g = build_admdp([[1, 2], [2, 0], [0, 1]])
    losses = np.random.default_rng(0).random((10, 3, 2))
    est = estimate_switch_probability(g, losses, 0.2, trials=500, seed=1)
    assert 0 <= est.probability <= 1 and est.trials == 500
    assert est.margin == pytest.approx(est.probability - est.bound)
