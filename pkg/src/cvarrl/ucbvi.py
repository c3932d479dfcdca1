"""CVaR-UCBVI: optimistic value iteration in the budget-augmented MDP."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .dp import best_budget, solve_optimal
from .envs import RngTape, TabularMdp, sample_episode, validate_normalized
from .grid import AugPolicy, BudgetGrid
from .history import RunHistory, compute_regret_series
from .risk import cvar_from_pmf

BONUS_KINDS = ("hoeffding", "bernstein")
CHECK_TOL = 1e-12
CACHE_LIMIT = 2048  # distinct (policy, budget) roll-in laws kept per run


def hoeffding_bonus(n: int, L: float) -> float:
    """``min(sqrt(L / n), 1)``."""
    if n < 1:
        raise ValueError("count must be at least 1")
    return min(math.sqrt(L / n), 1.0)


class LearnerModel:
    """Visit counts and the empirical transition kernel of one run."""

    def __init__(self, H: int, S: int, A: int, K: int, delta: float, tau: float, bonus: str):
        if bonus not in BONUS_KINDS:
            raise ValueError(f"unknown bonus kind {bonus!r}; choose from {BONUS_KINDS}")
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.H, self.S, self.A, self.K = H, S, A, K
        self.delta, self.tau, self.bonus = delta, tau, bonus
        self.L = math.log(H * S * A * max(K, 1) / delta)
        self.transitions = np.zeros((H, S, A, S), dtype=np.int64)
        self.k = 1

    @property
    def visits(self) -> np.ndarray:
        return self.transitions.sum(axis=3)

    @property
    def N(self) -> np.ndarray:
        """Visit counts floored at 1."""
        return np.maximum(self.visits, 1).astype(float)

    @property
    def P_hat(self) -> np.ndarray:
        """Empirical kernel; never-visited rows are uniform over states."""
        n = self.visits[..., None]
        return np.where(n > 0, self.transitions / np.maximum(n, 1), 1.0 / self.S)

    def update(self, traj) -> None:
        for h, (s, a, t) in enumerate(zip(traj.states, traj.actions, traj.next_states)):
            self.transitions[h, s, a, t] += 1
        self.k += 1

    def digest(self) -> str:
        return hashlib.sha256(self.transitions.tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ConfidenceTables:
    """Pessimistic ``lo`` and (Bernstein only) optimistic ``hi`` value tables, shape ``(H+1, S, n+1)``."""

    lo: np.ndarray
    hi: np.ndarray | None
    grid: BudgetGrid

    def inversions(self) -> int:
        """Cells where sampling noise put ``hi`` below ``lo``."""
        if self.hi is None:
            return 0
        return int(np.count_nonzero(self.hi < self.lo - CHECK_TOL))


@dataclass(frozen=True, eq=False)
class PlanResult:
    tables: ConfidenceTables
    policy: AugPolicy
    b_hat_idx: int
    bonus: np.ndarray  # bonus of the chosen action, (H, S, n+1)

    @property
    def b_hat(self) -> float:
        return self.policy.grid.value(self.b_hat_idx)


def _next_layer_expectation(mdp: TabularMdp, table: np.ndarray, h: int, s: int, a: int, b_idx: int, n: int) -> np.ndarray:
    """``E_r[table[h+1, s', b - r]]`` per successor ``s'``; negative budgets are worth 0."""
    dist = mdp.R[h][s][a]
    out = np.zeros(mdp.S)
    for v, p in zip(dist.values, dist.probs):
        k = b_idx - round(v * n)
        if k >= 0:
            out += p * table[h + 1, :, k]
    return out


def bernstein_bonus(model: LearnerModel, tables: ConfidenceTables, mdp: TabularMdp, h: int, s: int, b_idx: int, a: int) -> float:
    """Variance-adaptive bonus at one cell, from the next-layer tables.

    Sum of the empirical variance term of the reward-averaged ``lo``, the
    expected squared confidence width, and ``L / N``, truncated at 1.
    """
    n = tables.grid.n
    N = model.N[h, s, a]
    L = model.L
    p = model.P_hat[h, s, a]
    w = _next_layer_expectation(mdp, tables.lo, h, s, a, b_idx, n)
    mean = p @ w
    var = p @ (w - mean) ** 2
    hi = tables.hi if tables.hi is not None else tables.lo
    dist = mdp.R[h][s][a]
    width = 0.0
    for v, q in zip(dist.values, dist.probs):
        k = b_idx - round(v * n)
        if k >= 0:
            width += q * (p @ (hi[h + 1, :, k] - tables.lo[h + 1, :, k]) ** 2)
    return min(math.sqrt(2 * var * L / N) + math.sqrt(2 * width * L / N) + L / N, 1.0)


def plan_episode(model: LearnerModel, mdp: TabularMdp, grid: BudgetGrid, backend: str | None = None) -> PlanResult:
    """Backward induction with the model's kernel and bonuses, then the grid argmax for ``b_hat``."""
    lo, hi, pol, bon = kernels.plan(mdp, model.P_hat, model.N, grid.n, model.L, model.bonus, backend)
    b_idx, _ = best_budget(lo[0, mdp.s1], model.tau, grid)
    tables = ConfidenceTables(lo, hi if model.bonus == "bernstein" else None, grid)
    return PlanResult(tables, AugPolicy(pol, grid), b_idx, bon)


def xi_term(model: LearnerModel, cap: float = 1.0) -> np.ndarray:
    """``min(cap, 2 H S L / N)`` per ``(h, s, a)``."""
    return np.minimum(cap, 2.0 * model.H * model.S * model.L / model.N)


def simulation_gap_check(
    model: LearnerModel, plan: PlanResult, mdp: TabularMdp, backend: str | None = None, occ: np.ndarray | None = None,
) -> dict:
    """True value gap of the planned policy against ``e`` times its on-policy bonus and correction mass.

    Returns ``lhs``, ``rhs`` (correction capped at 1) and ``rhs_cap2`` (capped at 2).
    """
    grid = plan.policy.grid
    b0 = plan.b_hat_idx
    if occ is None:
        occ = kernels.occupancy(mdp, plan.policy.actions, b0, grid.n, backend)
    pmf = occ[-1].sum(axis=0)
    true_v = float(np.maximum(grid.value(b0) - grid.values, 0.0) @ pmf)
    lhs = true_v - float(plan.tables.lo[0, mdp.s1, b0])
    bon_mass, xi1, xi2 = _on_policy_sums(model, plan, occ)
    e = math.e
    return {"lhs": lhs, "rhs": e * (2 * bon_mass + xi1), "rhs_cap2": e * (2 * bon_mass + xi2)}


def _on_policy_sums(model: LearnerModel, plan: PlanResult, occ: np.ndarray) -> tuple[float, float, float]:
    H = model.H
    b0 = plan.b_hat_idx
    budgets = np.maximum(b0 - np.arange(occ.shape[2]), 0)
    acts = plan.policy.actions[:, :, budgets]  # (H, S, z)
    bon = plan.bonus[:, :, budgets]
    xi1 = np.take_along_axis(xi_term(model, 1.0), acts, axis=2)
    xi2 = np.take_along_axis(xi_term(model, 2.0), acts, axis=2)
    w = occ[:H]
    return float((w * bon).sum()), float((w * xi1).sum()), float((w * xi2).sum())


@dataclass
class _Checks:
    """First-violation bookkeeping for the high-probability events of one run."""

    pessimism: int | None = None
    optimism: int | None = None
    optimistic_cvar: int | None = None
    simulation_gap: int | None = None
    inversions: int = 0

    def flag(self, name: str, k: int) -> None:
        if getattr(self, name) is None:
            setattr(self, name, k)

    def summary(self, bernstein: bool) -> dict:
        return {
            "pessimism": self.pessimism is None,
            "optimism": (self.optimism is None) if bernstein else None,
            "optimistic_cvar": self.optimistic_cvar is None,
            "simulation_gap": self.simulation_gap is None,
            "first_violation": {
                "pessimism": self.pessimism, "optimism": self.optimism,
                "optimistic_cvar": self.optimistic_cvar, "simulation_gap": self.simulation_gap,
            },
            "inversions": self.inversions,
        }


def run_cvar_ucbvi(
    env: TabularMdp,
    bonus: str,
    K: int,
    delta: float,
    eta: float,
    tau: float,
    tape: RngTape,
    backend: str | None = None,
    diagnose: bool = False,
    checkpoints=(),
    callback: Callable[[int, PlanResult, LearnerModel], None] | None = None,
) -> RunHistory:
    """Run ``K`` episodes of plan, roll-in and count update.

    Every episode is charged the exact CVaR of ``(rho_hat, b_hat)`` in ``env``.
    ``checkpoints`` lists 1-based episodes at which a JSON snapshot is kept;
    ``diagnose`` checks the confidence events against the exact optimum.
    """
    grid = BudgetGrid.from_eta(eta)
    env.grid_rewards(grid.n)
    validate_normalized(env)
    model = LearnerModel(env.H, env.S, env.A, K, delta, tau, bonus)
    optimal = solve_optimal(env, tau, grid, backend)
    v_star = optimal.values.v
    checks = _Checks()
    snap_at = set(int(c) for c in checkpoints)
    cache: dict = {}
    picks, cvars = [], np.zeros(K)
    bonus_sum = np.zeros(K)
    b_hat = np.zeros(K)
    snapshots = []
    for k in range(1, K + 1):
        plan = plan_episode(model, env, grid, backend)
        key = (plan.policy.actions.tobytes(), plan.b_hat_idx)
        hit = cache.get(key)
        if hit is None:
            if len(cache) >= CACHE_LIMIT:
                cache.clear()
            occ = kernels.occupancy(env, plan.policy.actions, plan.b_hat_idx, grid.n, backend)
            hit = cache[key] = (cvar_from_pmf(grid.values, occ[-1].sum(axis=0), tau), plan.policy.digest(), occ)
        cvar_k, digest, occ = hit
        cvars[k - 1] = cvar_k
        picks.append((digest, plan.b_hat))
        b_hat[k - 1] = plan.b_hat
        bonus_sum[k - 1] = _on_policy_sums(model, plan, occ)[0]
        if diagnose:
            _diagnose(k, model, plan, env, v_star, optimal.cvar, tau, checks, occ, backend)
        if callback is not None:
            callback(k, plan, model)
        if k in snap_at:
            snapshots.append({
                "episode": k, "counts_digest": model.digest(), "b_hat": plan.b_hat,
                "bonus_sum": bonus_sum[k - 1], "policy_digest": digest,
            })
        model.update(sample_episode(env, plan.policy, plan.b_hat_idx, tape))
    inst, cum = compute_regret_series(picks, optimal.cvar, cvars)
    hist = RunHistory(
        "rl", f"cvar-ucbvi-{bonus}", tape.seed, picks, inst, cum, bonus_sum, b_hat,
        meta={"tau": tau, "K": K, "delta": delta, "eta": grid.eta, "n": grid.n, "L": model.L,
              "cvar_star": optimal.cvar, "b_star": optimal.b_star},
        snapshots=snapshots,
    )
    if diagnose:
        hist.diagnostics = checks.summary(bonus == "bernstein")
    return hist


def _diagnose(k, model, plan, env, v_star, cvar_star, tau, checks, occ, backend) -> None:
    lo, hi = plan.tables.lo, plan.tables.hi
    if np.any(lo > v_star + CHECK_TOL):
        checks.flag("pessimism", k)
    if hi is not None:
        if np.any(v_star > hi + CHECK_TOL):
            checks.flag("optimism", k)
        checks.inversions += plan.tables.inversions()
    optimistic = plan.b_hat - lo[0, env.s1, plan.b_hat_idx] / tau
    if optimistic < cvar_star - CHECK_TOL:
        checks.flag("optimistic_cvar", k)
    gap = simulation_gap_check(model, plan, env, backend, occ)
    if gap["lhs"] > gap["rhs"] + CHECK_TOL:
        checks.flag("simulation_gap", k)
