"""Acceptance criteria, one test each, at the stated tolerances and time limits."""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from cvarrl.bandits import run_bandit
from cvarrl.diagnostics import STANDARD_DISTS, concentration_coverage, coupling_check
from cvarrl.dp import enumerate_optimal_tiny, solve_optimal
from cvarrl.envs import RngTape, discretize_mdp, make_dense_reward_mdp, make_hard_mab, make_random_mdp
from cvarrl.grid import BudgetGrid
from cvarrl.harness import ExperimentConfig, loglog_slope, run_experiment
from cvarrl.risk import FiniteDist, acerbi_cvar, cvar_exact
from cvarrl.ucbvi import run_cvar_ucbvi

from helpers import random_dist

pytestmark = pytest.mark.acceptance

RL_INSTANCE = {"generator": "random_mdp", "params": {"S": 3, "A": 2, "H": 3, "n": 4, "seed": 0}}
TREE_INSTANCE = {"generator": "tree", "params": {"A": 2, "H": 3}}


def test_criterion_1_dp_equals_enumeration(verdict):
    rng = np.random.default_rng(2024)
    grid = BudgetGrid.from_eta(0.5)
    start = time.perf_counter()
    worst, count = 0.0, 0
    for i in range(60):
        S, A, H = (2, 2, 2) if i < 15 else (int(x) for x in rng.integers(1, 3, size=3))
        tau = float(rng.uniform(0.05, 1.0))
        mdp = make_random_mdp(S, A, H, grid.n, seed=1000 + i)
        worst = max(worst, abs(solve_optimal(mdp, tau, grid).cvar - enumerate_optimal_tiny(mdp, tau, grid)))
        count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and count >= 50 and elapsed < 10
    verdict(1, ok, f"{count} instances, max |dp - enum| = {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_cvar_identities(verdict):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = random_dist(rng, max_atoms=12)
        tau = float(rng.uniform(1e-3, 1.0))
        worst = max(worst, abs(cvar_exact(d, tau) - acerbi_cvar(d, tau)))
    bern = 0.0
    for _ in range(100):
        tau = float(rng.uniform(0.01, 1.0))
        eps = float(rng.uniform(0.0, tau))
        p_zero = tau - eps
        d = FiniteDist.from_arrays([0.0, 1.0], [p_zero, 1.0 - p_zero])
        bern = max(bern, abs(cvar_exact(d, tau) - eps / tau))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and bern <= 1e-15 and elapsed < 5
    verdict(2, ok, f"max |cvar - acerbi| = {worst:.1e}, max Bernoulli error = {bern:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_concentration_coverage(verdict):
    start = time.perf_counter()
    cover = {
        name: concentration_coverage(STANDARD_DISTS[name], 10_000, 0.1, 0.05, 1000, seed=i)["coverage"]
        for i, name in enumerate(("bernoulli", "three_atom", "eleven_atom"))
    }
    elapsed = time.perf_counter() - start
    ok = min(cover.values()) >= 0.95 and elapsed < 60
    verdict(3, ok, f"coverage {cover}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_discretization_coupling(verdict):
    start = time.perf_counter()
    out = coupling_check(S=3, A=2, H=3, eta=0.25, tau=0.25, rollouts=1000, seed=0, instances=50)
    elapsed = time.perf_counter() - start
    ok = out["sandwich_fraction"] == 1.0 and out["ordering_fraction"] == 1.0 and elapsed < 30
    verdict(4, ok, f"sandwich {out['sandwich_fraction']:.3f} of 1000, ordering {out['ordering_fraction']:.3f} of 50, {elapsed:.1f}s")
    assert ok


def _mab_mean(tau: float, K: int, learner: str, checkpoints, seeds=range(20)) -> np.ndarray:
    env = make_hard_mab(tau, 2, K)
    idx = np.asarray(checkpoints) - 1
    return np.mean([run_bandit(env, learner, K, 0.1, tau, RngTape(s)).cumulative[idx] for s in seeds], axis=0)


def test_criterion_5_mab_regret(verdict):
    start = time.perf_counter()
    cps = [1000, round(10**3.5), 10_000]
    ucb = _mab_mean(0.25, 10_000, "bernstein-ucb", cps)
    uni = _mab_mean(0.25, 10_000, "uniform-random", cps)
    ratio = ucb[-1] / uni[-1]
    slope = loglog_slope(cps, ucb)
    r_hi = _mab_mean(0.4, 10_000, "bernstein-ucb", [10_000])[0]
    r_lo = _mab_mean(0.1, 10_000, "bernstein-ucb", [10_000])[0]
    tau_ratio = r_lo / r_hi
    elapsed = time.perf_counter() - start
    a, b, c = ratio < 0.25, slope < 0.75, 1.4 <= tau_ratio <= 2.8
    ok = a and b and c and elapsed < 300
    verdict(5, ok, f"(a) ucb/uniform = {ratio:.3f} {'ok' if a else 'FAIL'}; (b) slope = {slope:.3f} "
                   f"{'ok' if b else 'FAIL'}; (c) regret(0.1)/regret(0.4) = {tau_ratio:.3f} {'ok' if c else 'FAIL'}; {elapsed:.0f}s")
    assert ok


def test_criterion_6_rl_regret(verdict, tmp_path):
    start = time.perf_counter()
    lines, ok = [], True
    for label, env in (("random", RL_INSTANCE), ("tree", TREE_INSTANCE)):
        cfg = ExperimentConfig.from_json({
            "mode": "rl", "env": env, "learners": ["hoeffding", "bernstein"], "tau": 0.25, "K": 20_000,
            "eta": 0.25, "delta": 0.1, "seeds": list(range(10)),
        }, tmp_path)
        res = run_experiment(cfg)
        agg = {k: res.aggregate(k) for k in cfg.learners}
        slopes = {k: agg[k]["slope"] for k in cfg.learners}
        final = {k: agg[k]["mean"][-1] for k in cfg.learners}
        good = not res.errors and all(s is not None and s < 0.8 for s in slopes.values()) and final["bernstein"] <= final["hoeffding"]
        ok &= good
        lines.append(f"{label}: slope H={slopes['hoeffding']:.3f} B={slopes['bernstein']:.3f}, "
                     f"final H={final['hoeffding']:.1f} B={final['bernstein']:.1f} {'ok' if good else 'FAIL'}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1200
    verdict(6, ok, "; ".join(lines) + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_7_confidence_events(verdict):
    start = time.perf_counter()
    env = make_random_mdp(3, 2, 3, 4, 0)
    fractions = {}
    for kind in ("bernstein", "hoeffding"):
        runs = [run_cvar_ucbvi(env, kind, 2000, 0.1, 0.25, 0.25, RngTape(s), diagnose=True).diagnostics for s in range(200)]
        events = ("pessimism", "optimism", "optimistic_cvar", "simulation_gap") if kind == "bernstein" else ("pessimism",)
        for e in events:
            fractions[f"{kind}:{e}"] = float(np.mean([r[e] for r in runs]))
    elapsed = time.perf_counter() - start
    ok = min(fractions.values()) >= 0.85 and elapsed < 900
    verdict(7, ok, ", ".join(f"{k} {v:.3f}" for k, v in fractions.items()) + f"; {elapsed:.0f}s")
    assert ok


def _best_time(env, K: int, eta: float, repeats: int = 3) -> float:
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        run_cvar_ucbvi(env, "bernstein", K, 0.1, eta, 0.25, RngTape(0))
        best = min(best, time.perf_counter() - t)
    return best


def test_criterion_8_runtime_scaling(verdict):
    base = make_dense_reward_mdp(3, 2, 3, seed=0, atoms=20_000)
    coarse = discretize_mdp(base, 1 / 400).mdp
    fine = discretize_mdp(base, 1 / 800).mdp
    _best_time(coarse, 2, 1 / 400, 1)
    _best_time(fine, 2, 1 / 800, 1)
    t_k = _best_time(coarse, 40, 1 / 400)
    t_2k = _best_time(coarse, 80, 1 / 400)
    t_eta = _best_time(fine, 40, 1 / 800)
    k_ratio, eta_ratio = t_2k / t_k, t_eta / t_k
    ok = 1.4 <= k_ratio <= 2.6 and 2.8 <= eta_ratio <= 5.2
    verdict(8, ok, f"doubling K: x{k_ratio:.2f} (target 2), halving eta: x{eta_ratio:.2f} (target 4)")
    assert ok


def test_criterion_9_determinism(verdict, tmp_path):
    docs = {
        "mab": {"mode": "mab", "env": {"generator": "hard_mab", "params": {"A": 3}}, "tau": 0.25, "K": 2000,
                "learners": ["bernstein-ucb", "brown-ucb", "uniform-random"], "seeds": [0, 1, 2, 3]},
        "rl": {"mode": "rl", "env": RL_INSTANCE, "tau": 0.25, "K": 500, "eta": 0.25,
               "learners": ["hoeffding", "bernstein"], "seeds": [0, 1, 2, 3], "diagnose": True},
    }
    same = True
    for name, doc in docs.items():
        blobs = []
        for j, par in enumerate((1, 4, 2, 1)):
            d = tmp_path / f"{name}{j}"
            d.mkdir()
            (d / "cfg.json").write_text(json.dumps({**doc, "csv": "r.csv", "json": "r.json"}))
            run_experiment(ExperimentConfig.load(d / "cfg.json"), par)
            blobs.append(((d / "r.csv").read_bytes(), (d / "r.json").read_bytes()))
        same &= all(b == blobs[0] for b in blobs)
    verdict(9, same, "mab and rl outputs byte-identical across parallelism 1, 4, 2 and a rerun")
    assert same
