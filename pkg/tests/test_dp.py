from __future__ import annotations

import numpy as np
import pytest

from cvarrl import kernels
from cvarrl.dp import (
    enumerate_optimal_tiny,
    evaluate_policy_cvar,
    policy_value,
    returns_distribution,
    solve_optimal,
)
from cvarrl.envs import InstanceError, RngTape, TabularMdp, bandit_as_mdp, make_random_mdp, sample_episode
from cvarrl.grid import AugPolicy, BudgetGrid
from cvarrl.risk import FiniteDist, cvar_concentration_radius, cvar_exact, empirical_cvar


def plain_vi(mdp: TabularMdp) -> float:
    """Risk-neutral optimal expected return by ordinary value iteration."""
    v = np.zeros(mdp.S)
    for h in reversed(range(mdp.H)):
        q = np.array([[mdp.R[h][s][a].mean() + mdp.P[h, s, a] @ v for a in range(mdp.A)] for s in range(mdp.S)])
        v = q.max(axis=1)
    return float(v[mdp.s1])


def enumerate_paths(mdp: TabularMdp, policy: AugPolicy, b0_idx: int) -> dict:
    """Return law by explicit recursion over every (reward, next-state) branch."""
    n = policy.grid.n
    law: dict = {}

    def walk(h, s, b, z, p):
        if p == 0.0:
            return
        if h == mdp.H:
            law[z] = law.get(z, 0.0) + p
            return
        a = policy.act(h, s, b)
        d = mdp.R[h][s][a]
        for r, pr in zip(d.values, d.probs):
            k = round(r * n)
            for t in range(mdp.S):
                walk(h + 1, t, b - k, z + k, p * pr * mdp.P[h, s, a, t])

    walk(0, mdp.s1, b0_idx, 0, 1.0)
    return law


def two_step_payout() -> TabularMdp:
    P = np.ones((2, 1, 1, 1))
    R = [[[FiniteDist.point(0.0)]], [[FiniteDist.point(1.0)]]]
    return TabularMdp(1, 1, 2, 0, P, R)


class TestSolveOptimal:
    def test_degenerate_chain(self, backend):
        sol = solve_optimal(two_step_payout(), 0.3, BudgetGrid(4), backend)
        assert sol.cvar == pytest.approx(1.0, abs=1e-15)
        assert sol.b_star == 1.0
        np.testing.assert_array_equal(sol.values.v[0, 0], np.zeros(5))

    def test_bandit_case_matches_arm_cvars(self, backend):
        rng = np.random.default_rng(2)
        for _ in range(20):
            arms = [FiniteDist.from_arrays(rng.integers(0, 11, size=3) / 10, rng.dirichlet(np.ones(3))) for _ in range(3)]
            tau = float(rng.uniform(0.05, 1.0))
            sol = solve_optimal(bandit_as_mdp(arms), tau, BudgetGrid(10), backend)
            assert sol.cvar == pytest.approx(max(cvar_exact(a, tau) for a in arms), abs=1e-12)

    def test_tau_one_equals_plain_value_iteration(self, backend):
        for seed in range(15):
            mdp = make_random_mdp(3, 2, 3, 10, seed)
            assert solve_optimal(mdp, 1.0, BudgetGrid(10), backend).cvar == pytest.approx(plain_vi(mdp), abs=1e-10)

    def test_value_table_structure(self, backend):
        mdp = make_random_mdp(3, 3, 4, 8, 5)
        grid = BudgetGrid(8)
        v = solve_optimal(mdp, 0.2, grid, backend).values.v
        np.testing.assert_array_equal(v[-1], np.broadcast_to(grid.values, v[-1].shape))
        assert v.min() >= 0.0 and v.max() <= 1.0
        steps = np.diff(v, axis=2)
        assert steps.min() >= -1e-15
        assert steps.max() <= grid.eta + 1e-12

    def test_policy_attains_optimum(self, backend):
        for seed in range(10):
            mdp = make_random_mdp(3, 2, 3, 4, seed)
            grid = BudgetGrid(4)
            sol = solve_optimal(mdp, 0.25, grid, backend)
            assert evaluate_policy_cvar(mdp, sol.policy, sol.b_star_idx, 0.25, backend=backend) == pytest.approx(sol.cvar, abs=1e-12)
            assert policy_value(mdp, sol.policy, sol.b_star_idx, backend) == pytest.approx(sol.values.v[0, 0, sol.b_star_idx], abs=1e-12)

    def test_off_grid_reward_rejected(self):
        mdp = bandit_as_mdp([FiniteDist.point(0.3)])
        with pytest.raises(InstanceError):
            solve_optimal(mdp, 0.5, BudgetGrid(4))

    def test_backends_agree(self):
        if len(kernels.AVAILABLE) < 2:
            pytest.skip("compiled backend not built")
        mdp = make_random_mdp(4, 3, 3, 10, 1)
        for mode in kernels.MODES:
            N = np.random.default_rng(0).integers(1, 30, size=(3, 4, 3)).astype(float)
            a = kernels.plan(mdp, mdp.P, N, 10, 2.0, mode, "cython")
            b = kernels.plan(mdp, mdp.P, N, 10, 2.0, mode, "python")
            for x, y in zip(a, b):
                np.testing.assert_allclose(x, y, atol=1e-12)


class TestReturnsDistribution:
    def test_point_mass_for_deterministic(self, backend):
        d = returns_distribution(two_step_payout(), AugPolicy.constant(2, 1, BudgetGrid(4)), 0, backend=backend)
        assert d == FiniteDist.point(1.0)

    def test_one_step_is_arm_law(self, backend):
        arm = FiniteDist.from_atoms([(0.0, 0.2), (0.5, 0.3), (1.0, 0.5)])
        mdp = bandit_as_mdp([FiniteDist.point(0.0), arm])
        d = returns_distribution(mdp, AugPolicy.constant(1, 1, BudgetGrid(2), 1), 2, backend=backend)
        assert d == arm

    def test_matches_path_enumeration(self, backend):
        grid = BudgetGrid(4)
        rng = np.random.default_rng(17)
        for seed in range(10):
            mdp = make_random_mdp(2, 2, 2, 4, seed)
            pol = AugPolicy(rng.integers(0, 2, size=(2, 2, 5)), grid)
            for b0 in range(5):
                law = enumerate_paths(mdp, pol, b0)
                d = returns_distribution(mdp, pol, b0, backend=backend)
                expected = FiniteDist.from_arrays([z / 4 for z in law], list(law.values()))
                np.testing.assert_array_equal(d.values, expected.values)
                np.testing.assert_allclose(d.probs, expected.probs, atol=1e-15)

    def test_mass_conserved(self, backend):
        mdp = make_random_mdp(4, 2, 5, 20, 3)
        pol = AugPolicy(np.random.default_rng(0).integers(0, 2, size=(5, 4, 21)), BudgetGrid(20))
        occ = kernels.occupancy(mdp, pol.actions, 13, 20, backend)
        np.testing.assert_allclose(occ.sum(axis=(1, 2)), 1.0, atol=1e-10)

    def test_zero_reward_policy(self):
        mdp = bandit_as_mdp([FiniteDist.point(0.0), FiniteDist.point(1.0)])
        assert evaluate_policy_cvar(mdp, AugPolicy.constant(1, 1, BudgetGrid(2), 0), 1, 0.5) == 0.0

    def test_monte_carlo_cross_check(self):
        mdp = make_random_mdp(3, 2, 3, 10, 4)
        grid = BudgetGrid(10)
        sol = solve_optimal(mdp, 0.2, grid)
        tape = RngTape(12)
        rets = [sample_episode(mdp, sol.policy, sol.b_star_idx, tape).ret for _ in range(100_000)]
        radius = cvar_concentration_radius(100_000, 0.2, 0.01).value
        assert abs(empirical_cvar(rets, 0.2) - sol.cvar) <= radius


class TestEnumeration:
    def test_bandit_case(self, backend):
        mdp = bandit_as_mdp([FiniteDist.from_atoms([(0.0, 0.5), (1.0, 0.5)]), FiniteDist.point(0.5)])
        grid = BudgetGrid(2)
        assert enumerate_optimal_tiny(mdp, 0.5, grid, backend) == pytest.approx(solve_optimal(mdp, 0.5, grid).cvar, abs=1e-12)

    def test_random_tiny_instances(self, backend):
        rng = np.random.default_rng(23)
        for seed in range(5):
            mdp = make_random_mdp(2, 2, 2, 2, seed)
            tau = float(rng.uniform(0.05, 1.0))
            grid = BudgetGrid(2)
            assert enumerate_optimal_tiny(mdp, tau, grid, backend) == pytest.approx(solve_optimal(mdp, tau, grid).cvar, abs=1e-12)

    def test_guard(self):
        with pytest.raises(ValueError, match="guard"):
            enumerate_optimal_tiny(make_random_mdp(3, 2, 3, 4, 0), 0.5, BudgetGrid(4))

