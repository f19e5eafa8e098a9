"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (lines also appear without
``-s``). Criteria 4, 5, 9 and 10 take a few minutes between them on one core.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import draw_graph
from test_cycle_opt import brute_best
from test_graph import brute_classes, brute_critical_length, nx_period, walk_lengths
from fplmdp.adversary import AdversarySpec, gen_lower_bound_instance, geometric_gadget, make_losses, random_communicating_mdp
from fplmdp.cycle_opt import best_cycle_overall, fold_losses, walk_folded_loss
from fplmdp.errors import NoPath
from fplmdp.experiment import fit_regret_slope, run_experiment, run_one
from fplmdp.fpl import LambdaMode, PerturbationSet, estimate_switch_probability
from fplmdp.graph import build_admdp, path_of_length, replay
from fplmdp.learner_det import run as run_det
from fplmdp.learner_oracle import OracleFpl, estimate_oracle_switch_probability, run_oracle
from fplmdp.learner_stoch import catch_samples, expected_catch_time_stats, run_stochastic
from fplmdp.mdpio import load_mdp
from fplmdp.stochastic import StochasticMdp, build_catching_plan

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# regret of learner-det on the 4-state, 2-action lower-bound instance is
# about C_DET * sqrt(T); fitted on seeds 0..29 at T = 2^16 and frozen
C_DET = 0.567


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_01_graph_analysis(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    bad = 0
    for _ in range(200):
        g = draw_graph(rng, max_states=5, max_actions=3)
        ok = g.period == nx_period(g) and g.classes.tolist() == brute_classes(g)
        ok = ok and g.critical_length == brute_critical_length(g)
        for _ in range(5):
            src, dst = (int(x) for x in rng.integers(0, g.num_states, 2))
            length = int(rng.integers(0, 13))
            reachable = dst in walk_lengths(g, src, length)[length]
            try:
                acts = path_of_length(g, src, dst, length)
                ok = ok and reachable and len(acts) == length and replay(g, src, acts) == dst
            except NoPath:
                ok = ok and not reachable
        bad += not ok
    elapsed = time.perf_counter() - start
    report(1, bad == 0 and elapsed < 60, f"200 graphs, {bad} mismatches, {elapsed:.1f}s")


def test_criterion_02_lp_leader(report):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst, invalid = 0.0, 0
    for _ in range(100):
        g = draw_graph(rng, max_states=5, max_actions=3)
        losses = rng.random((int(rng.integers(0, 12)), g.num_states, g.num_actions))
        pert = PerturbationSet.draw(g.num_states, g.num_actions, float(rng.uniform(0.2, 2.0)), rng)
        best = best_cycle_overall(g, losses, pert, 0, method="lp")
        expected = brute_best(g, losses, pert, 0)
        c = best.walk
        folded = fold_losses(losses, c.start, c.length, pert, shape=(g.num_states, g.num_actions))
        realized = folded.offset + walk_folded_loss(c, folded)
        worst = max(worst, abs(best.value - expected), abs(realized - expected))
        invalid += not (c.is_valid(g) and g.classes[c.start] == 0 and c.length <= g.num_states)
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-6 and invalid == 0 and elapsed < 120,
           f"100 instances, max gap {worst:.2e}, {invalid} invalid walks, {elapsed:.1f}s")


def test_criterion_03_switch_probability(report):
    g = build_admdp([[1, 0], [2, 0], [0, 1]])
    losses = make_losses(AdversarySpec("iid_uniform", seed=3), 3, 2, 12)
    parts, ok = [], True
    for lam in (0.05, 0.1, 0.2):
        est = estimate_switch_probability(g, losses, lam, trials=10_000, seed=int(lam * 100))
        ok &= est.within_bound
        parts.append(f"lam {lam}: p {est.probability:.4f} <= bound {est.bound:.4f} (margin {est.margin:+.4f}, 3sigma {3 * est.sigma:.4f})")
    report(3, ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_04_det_scaling(report):
    start = time.perf_counter()
    horizons = [2**k for k in range(10, 17)]
    means = {}
    for horizon in horizons:
        regrets = []
        for seed in range(30):
            g, losses = gen_lower_bound_instance(4, 2, horizon, seed=seed)
            regrets.append(run_det(g, losses, LambdaMode("horizon", horizon), 0, seed=seed).regret)
        means[horizon] = float(np.mean(regrets))
    slope, _, r2 = fit_regret_slope(means)
    ratio = means[2**16] / (C_DET * math.sqrt(2**16))
    elapsed = time.perf_counter() - start
    ok = 0.40 <= slope <= 0.60 and r2 >= 0.95 and 0.25 <= ratio <= 4.0 and elapsed < 600
    report(4, ok, f"slope {slope:.3f}, r2 {r2:.4f}, regret(2^16) {means[2**16]:.1f} = {ratio:.2f} x {C_DET}*sqrt(T), {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_05_lower_bound(report):
    horizon, trials, n, m = 2**14, 50, 4, 2
    threshold = 0.05 * math.sqrt(n * horizon * math.log(m))
    mode = LambdaMode("horizon", horizon)
    regrets = {"det": [], "stoch": [], "oracle": []}
    for seed in range(trials):
        g, losses = gen_lower_bound_instance(n, m, horizon, seed=seed)
        regrets["det"].append(run_det(g, losses, mode, 0, seed=seed).regret)
        point = StochasticMdp.from_graph(g, np.eye(n)[0])
        regrets["stoch"].append(run_stochastic(point, losses, mode, seed=seed).regret)
        uniform = StochasticMdp.from_graph(g, np.full(n, 1.0 / n))
        regrets["oracle"].append(run_oracle(uniform, losses, 1.0 / n, mode, seed=seed).regret)
    means = {k: float(np.mean(v)) for k, v in regrets.items()}
    ok = all(v >= threshold for v in means.values())
    report(5, ok, ", ".join(f"{k} {v:.1f}" for k, v in means.items()) + f" vs threshold {threshold:.2f}")


def criterion_6_instances():
    rng = np.random.default_rng(606)
    out = []
    for n in (3, 4, 5):
        mdp = random_communicating_mdp(n, 2, rng)
        out.append((mdp, build_catching_plan(mdp), rng.integers(0, 2, n)))
    return out


def catch_tv_table(mdp, plan, policy, seed, t0=5, total=10**5):
    times, landed, dist = catch_samples(mdp, plan, policy, t0, total, seed=seed)
    rows = []
    values, counts = np.unique(times, return_counts=True)
    for v, c in zip(values, counts):
        if c < 500:
            continue
        observed = np.bincount(landed[times == v], minlength=mdp.num_states)
        rows.append((int(v), int(c), observed, dist(int(v))))
    return times - t0, rows


@pytest.fixture(scope="module")
def catch_runs():
    return [(mdp, plan) + catch_tv_table(mdp, plan, pol, seed=i) for i, (mdp, plan, pol) in enumerate(criterion_6_instances())]


def test_criterion_06_catch_distribution(report, catch_runs):
    worst, checked, above = 0.0, 0, 0
    for _, _, _, rows in catch_runs:
        for _, c, observed, expected in rows:
            tv = 0.5 * np.abs(observed / c - expected).sum()
            worst = max(worst, tv)
            checked += 1
            above += tv > 0.02
    report(6, above == 0, f"{checked} (instance, T_switch) values with >= 500 samples, {above} above TV 0.02, max TV {worst:.4f}")


def test_catch_distribution_goodness_of_fit(catch_runs):
    # companion to criterion 6: TV at the 0.02 level where the sample size resolves it,
    # and a chi-square test of every well-sampled value against d_pi^tau
    pvalues = []
    for _, _, _, rows in catch_runs:
        for _, c, observed, expected in rows:
            if c >= 10**4:
                assert 0.5 * np.abs(observed / c - expected).sum() <= 0.02
            keep = expected > 0
            assert observed[~keep].sum() == 0
            pvalues.append(stats.chisquare(observed[keep], c * expected[keep]).pvalue)
    # Bonferroni over all tested values at overall level 1e-3
    assert min(pvalues) > 1e-3 / len(pvalues)


def test_criterion_07_catch_time(report, catch_runs):
    parts, ok = [], True
    for mdp, plan, delays, _ in catch_runs:
        limit = 48 * plan.ceil_d**2
        ok &= delays.mean() <= limit
        parts.append(f"mean {delays.mean():.2f} <= {limit}")
    q = 0.3
    gadget = geometric_gadget(q)
    mean, se = expected_catch_time_stats(gadget, build_catching_plan(gadget), np.zeros(3, dtype=int), t0=1, trials=20_000, seed=7)
    ok &= abs(mean - 2 / q) <= 3 * se
    parts.append(f"gadget q={q}: mean {mean:.3f} vs 2/q {2 / q:.3f} (3se {3 * se:.3f})")
    report(7, ok, "; ".join(parts))


def test_criterion_08_plan_bounds(report):
    rng = np.random.default_rng(8)
    failures = 0
    for i in range(500):
        n = int(rng.integers(1, 7))
        m = 1 if n == 1 else int(rng.integers(2, 4))
        mdp = random_communicating_mdp(n, m, rng, support=int(rng.integers(1, 4)))
        plan = build_catching_plan(mdp)
        p_min = min(t.p for t in plan.targets)
        failures += not (plan.ell_star <= 2 * plan.ceil_d and p_min >= 1.0 / (4 * plan.ceil_d))
    report(8, failures == 0, f"500 instances, {failures} violations")


def expected_regret_slope(algo, extra=None):
    doc = {"version": 1, "mdp": "loop3.json", "algorithms": [algo], "adversary": {"kind": "iid_uniform"},
           "horizons": [2**k for k in range(9, 14)], "seeds": list(range(30)), "lambda": "horizon"}
    doc.update(extra or {})
    records = run_experiment(doc, CONFIGS)
    means = {t: float(np.mean([r.extra["expected_regret"] for r in records if r.horizon == t])) for t in doc["horizons"]}
    return fit_regret_slope(means), means


@pytest.mark.slow
def test_criterion_09_stoch_scaling(report):
    (slope, _, r2), means = expected_regret_slope("stoch")
    report(9, 0.35 <= slope <= 0.65, f"slope {slope:.3f} (r2 {r2:.3f}), mean regret {means[512]:.2f} at 2^9, {means[8192]:.2f} at 2^13")


def switch_count(start, seed, horizon=64):
    kernel = np.tile(np.array([0.9, 0.1]), (2, 2, 1))
    mdp = StochasticMdp(kernel, start)
    losses = np.zeros((horizon, 2, 2))
    losses[0::2, 0, 0] = 1.0
    losses[1::2, 0, 1] = 1.0
    fpl = OracleFpl(mdp, float(min(start)), LambdaMode("horizon", horizon), seed=seed)
    for loss in losses:
        fpl.step(loss)
    return fpl.switches


@pytest.mark.slow
def test_criterion_10_oracle_behaviour(report):
    (slope, _, r2), _ = expected_regret_slope("oracle", {"alpha": 1 / 3})
    slope_ok = 0.35 <= slope <= 0.65

    # alpha = 1/2 vs alpha = 1/4: losses live on the state whose start mass is alpha
    wide = sum(switch_count([0.5, 0.5], s) for s in range(1000))
    narrow = sum(switch_count([0.25, 0.75], s) for s in range(1000))
    ratio = narrow / wide
    ratio_ok = 0.75 * math.sqrt(2) <= ratio <= 1.25 * math.sqrt(2)

    mdp = load_mdp(CONFIGS / "loop3.json").mdp
    losses = make_losses(AdversarySpec("iid_uniform", seed=10), 3, 2, 25)
    ests = [estimate_oracle_switch_probability(mdp, losses, 1 / 3, lam, trials=10_000, seed=i)
            for i, lam in enumerate((0.02, 0.05))]
    bound_ok = all(e.within_bound for e in ests)
    detail = (f"slope {slope:.3f} (r2 {r2:.3f}); switches {narrow}/{wide} = {ratio:.3f} vs sqrt2 window "
              f"[{0.75 * math.sqrt(2):.3f}, {1.25 * math.sqrt(2):.3f}]; per-step "
              + ", ".join(f"{e.probability:.4f} <= {e.bound:.4f}" for e in ests))
    report(10, slope_ok and ratio_ok and bound_ok, detail)


def test_criterion_11_determinism(report, tmp_path):
    same = True
    for name, extra in (("det_sweep.json", {"horizons": [256], "seeds": [3]}),
                        ("stoch_run.json", {"horizons": [128], "seeds": [4]})):
        doc = dict(json.loads((CONFIGS / name).read_text()), write_runs=True, **extra)
        outs = []
        for k in range(2):
            run_experiment(doc, CONFIGS, tmp_path / f"{name}{k}")
            outs.append({p.relative_to(tmp_path / f"{name}{k}"): p.read_bytes()
                         for p in sorted((tmp_path / f"{name}{k}").rglob("*.csv"))})
        same &= outs[0] == outs[1] and len(outs[0]) > 2
    report(11, same, "repeated det, stoch and oracle runs give byte-identical CSV files")
