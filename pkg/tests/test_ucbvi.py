from __future__ import annotations

import math

import numpy as np
import pytest

from cvarrl.dp import solve_optimal
from cvarrl.envs import RngTape, TabularMdp, make_random_mdp, make_tree_mdp
from cvarrl.grid import BudgetGrid
from cvarrl.risk import FiniteDist
from cvarrl.ucbvi import (
    ConfidenceTables,
    LearnerModel,
    bernstein_bonus,
    hoeffding_bonus,
    plan_episode,
    run_cvar_ucbvi,
    simulation_gap_check,
)

# Frozen from tests/oracles/derive.py
HOEFFDING_LN2_8 = 0.29435250562886867275


class ExactModel(LearnerModel):
    """Learner model pinned to the true kernel with chosen counts and log term."""

    def __init__(self, mdp: TabularMdp, counts, L: float, bonus: str, tau: float = 0.25):
        super().__init__(mdp.H, mdp.S, mdp.A, 1, 0.5, tau, bonus)
        self._P = mdp.P
        self._N = np.broadcast_to(np.asarray(counts, dtype=float), (mdp.H, mdp.S, mdp.A)).copy()
        self.L = L

    @property
    def P_hat(self):
        return self._P

    @property
    def N(self):
        return self._N


def point_mdp(P_row) -> TabularMdp:
    """One step from state 0 into two successors, zero reward, then a free step."""
    P = np.zeros((2, 2, 1, 2))
    P[0, :, 0] = P_row
    P[1, :, 0] = [1.0, 0.0]
    zero = FiniteDist.point(0.0)
    return TabularMdp(2, 1, 2, 0, P, [[[zero], [zero]], [[zero], [zero]]])


class TestHoeffding:
    def test_untruncated(self):
        assert hoeffding_bonus(16, 4.0) == 0.5

    def test_truncated(self):
        assert hoeffding_bonus(1, 4.0) == 1.0

    def test_value(self):
        assert hoeffding_bonus(8, math.log(2)) == pytest.approx(HOEFFDING_LN2_8, rel=1e-14)


class TestBernsteinBonus:
    def _model(self, counts):
        mdp = point_mdp([0.5, 0.5])
        model = LearnerModel(2, 2, 1, 1, 0.5, 0.25, "bernstein")
        model.transitions[0, 0, 0] = counts
        return mdp, model

    def test_constant_tables_leave_only_the_count_term(self):
        mdp, model = self._model([5, 5])
        lo = np.full((3, 2, 5), 0.3)
        tables = ConfidenceTables(lo, lo.copy(), BudgetGrid(4))
        assert bernstein_bonus(model, tables, mdp, 0, 0, 2, 0) == pytest.approx(model.L / 10, abs=1e-15)

    def test_single_visit_truncates(self):
        mdp, model = self._model([1, 0])
        assert model.L >= 1
        lo = np.random.default_rng(0).uniform(size=(3, 2, 5))
        tables = ConfidenceTables(lo, np.maximum(lo, 0.9), BudgetGrid(4))
        assert bernstein_bonus(model, tables, mdp, 0, 0, 3, 0) == 1.0

    def test_two_successor_variance(self):
        mdp, model = self._model([5, 5])
        lo = np.zeros((3, 2, 5))
        lo[1, 1, :] = 1.0
        tables = ConfidenceTables(lo, lo.copy(), BudgetGrid(4))
        L, n = model.L, 10
        expected = math.sqrt(2 * 0.25 * L / n) + L / n
        assert bernstein_bonus(model, tables, mdp, 0, 0, 4, 0) == pytest.approx(expected, abs=1e-15)

    def test_kernel_matches_cellwise_formula(self, backend):
        env = make_random_mdp(3, 2, 3, 4, 6)
        model = LearnerModel(3, 3, 2, 5000, 0.1, 0.25, "bernstein")
        model.transitions[:] = np.random.default_rng(0).integers(0, 400, size=model.transitions.shape)
        grid = BudgetGrid(4)
        plan = plan_episode(model, env, grid, backend)
        for h in range(3):
            for s in range(3):
                for i in range(5):
                    a = plan.policy.act(h, s, i)
                    assert plan.bonus[h, s, i] == pytest.approx(
                        bernstein_bonus(model, plan.tables, env, h, s, i, a), abs=1e-12
                    )


class TestModel:
    def test_unvisited_rows_uniform_and_rows_normalized(self):
        model = LearnerModel(2, 3, 2, 10, 0.1, 0.5, "hoeffding")
        model.transitions[0, 1, 0] = [2, 0, 6]
        P = model.P_hat
        np.testing.assert_allclose(P.sum(-1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(P[1, 2, 1], np.full(3, 1 / 3))
        np.testing.assert_allclose(P[0, 1, 0], [0.25, 0.0, 0.75])
        assert model.N.min() == 1.0

    def test_log_term(self):
        model = LearnerModel(3, 4, 2, 1000, 0.1, 0.5, "bernstein")
        assert model.L == pytest.approx(math.log(3 * 4 * 2 * 1000 / 0.1))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            LearnerModel(1, 1, 1, 1, 0.1, 0.5, "kl")


class TestPlanEpisode:
    def test_cold_start(self, backend):
        env = make_random_mdp(3, 2, 3, 4, 2)
        model = LearnerModel(3, 3, 2, 100, 0.1, 0.25, "hoeffding")
        plan = plan_episode(model, env, BudgetGrid(4), backend)
        assert np.all(plan.tables.lo[:3] == 0.0)
        assert plan.b_hat == 1.0

    def test_infinite_counts_recover_optimum(self, backend):
        env = make_random_mdp(3, 2, 3, 4, 9)
        grid = BudgetGrid(4)
        sol = solve_optimal(env, 0.25, grid, backend)
        for kind in ("hoeffding", "bernstein"):
            plan = plan_episode(ExactModel(env, 1e30, 1.0, kind), env, grid, backend)
            np.testing.assert_allclose(plan.tables.lo, sol.values.v, atol=1e-12)
            assert plan.b_hat_idx == sol.b_star_idx

    def test_sandwich_with_true_kernel(self, backend):
        rng = np.random.default_rng(1)
        grid = BudgetGrid(4)
        for seed in range(10):
            env = make_random_mdp(2, 2, 3, 4, seed)
            v_star = solve_optimal(env, 0.25, grid, backend).values.v
            counts = rng.integers(1, 50, size=(3, 2, 2))
            plan = plan_episode(ExactModel(env, counts, 2.0, "bernstein"), env, grid, backend)
            assert np.all(plan.tables.lo <= v_star + 1e-12)
            assert np.all(v_star <= plan.tables.hi + 1e-12)

    def test_clipping(self, backend):
        env = make_random_mdp(3, 2, 3, 4, 4)
        model = LearnerModel(3, 3, 2, 1000, 0.1, 0.25, "bernstein")
        model.transitions[:] = np.random.default_rng(3).integers(0, 30, size=model.transitions.shape)
        t = plan_episode(model, env, BudgetGrid(4), backend).tables
        assert t.lo.min() >= 0.0 and t.lo.max() <= 1.0
        assert t.hi.min() >= 0.0 and t.hi.max() <= 1.0


class TestSimulationGap:
    def test_exact_model_zero_bonus(self, backend):
        env = make_random_mdp(3, 2, 3, 4, 1)
        model = ExactModel(env, 1e30, 0.0, "hoeffding")
        plan = plan_episode(model, env, BudgetGrid(4), backend)
        gap = simulation_gap_check(model, plan, env, backend)
        assert gap["lhs"] == pytest.approx(0.0, abs=1e-12)
        assert gap["rhs"] == pytest.approx(0.0, abs=1e-12)

    def test_cold_start_rhs_dominates(self):
        env = make_random_mdp(3, 2, 3, 4, 1)
        model = LearnerModel(3, 3, 2, 100, 0.1, 0.25, "hoeffding")
        gap = simulation_gap_check(model, plan_episode(model, env, BudgetGrid(4)), env)
        assert gap["lhs"] <= 1.0
        assert gap["rhs"] >= math.e * 3 * 3 - 1e-9
        assert gap["rhs_cap2"] >= gap["rhs"]


class TestRun:
    def test_zero_episodes(self):
        h = run_cvar_ucbvi(make_random_mdp(2, 2, 2, 4, 0), "hoeffding", 0, 0.1, 0.25, 0.25, RngTape(0))
        assert h.K == 0
        assert h.cumulative.size == 0

    def test_deterministic_mdp_stops_regretting(self):
        P = np.zeros((3, 2, 2, 2))
        P[:, :, 0, 0] = 1.0
        P[:, :, 1, 1] = 1.0
        pay = [FiniteDist.point(0.0), FiniteDist.point(1 / 3)]
        R = [[pay, pay] for _ in range(3)]
        env = TabularMdp(2, 2, 3, 0, P, R)
        learned = []

        def cb(k, plan, model):
            seen = model.visits > 0
            learned.append(np.array_equal(model.P_hat[seen], env.P[seen]))

        h = run_cvar_ucbvi(env, "hoeffding", 3000, 0.1, 1 / 3, 1.0, RngTape(0), callback=cb)
        assert all(learned)
        detours = h.instant > 0
        assert detours[-1000:].sum() < detours[:1000].sum() / 3

    def test_counts_track_episodes(self):
        env = make_random_mdp(3, 2, 3, 4, 5)
        seen = {}

        def cb(k, plan, model):
            seen[k] = model.visits.sum(axis=(1, 2)).tolist()

        run_cvar_ucbvi(env, "bernstein", 30, 0.1, 0.25, 0.25, RngTape(1), callback=cb)
        assert all(v == [k - 1] * 3 for k, v in seen.items())

    def test_byte_identical_reruns(self, backend):
        env = make_tree_mdp(0.25, 2, 3, 500)
        a = run_cvar_ucbvi(env, "bernstein", 300, 0.1, 0.25, 0.25, RngTape(7), backend=backend, checkpoints=[10, 300]).to_json()
        b = run_cvar_ucbvi(env, "bernstein", 300, 0.1, 0.25, 0.25, RngTape(7), backend=backend, checkpoints=[10, 300]).to_json()
        assert a == b
        assert [s["episode"] for s in a["snapshots"]] == [10, 300]

    def test_backends_give_identical_histories(self):
        from cvarrl import kernels

        if len(kernels.AVAILABLE) < 2:
            pytest.skip("compiled backend not built")
        env = make_random_mdp(3, 2, 3, 4, 8)
        runs = [run_cvar_ucbvi(env, "bernstein", 200, 0.1, 0.25, 0.25, RngTape(2), backend=b) for b in ("cython", "python")]
        assert runs[0].picks == runs[1].picks
        np.testing.assert_allclose(runs[0].cumulative, runs[1].cumulative, atol=1e-12)

    def test_diagnostics_reported(self):
        h = run_cvar_ucbvi(make_random_mdp(3, 2, 3, 4, 0), "bernstein", 200, 0.1, 0.25, 0.25, RngTape(0), diagnose=True)
        assert set(h.diagnostics) >= {"pessimism", "optimism", "optimistic_cvar", "simulation_gap"}
