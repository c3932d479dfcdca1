"""Exact dynamic programming in the budget-augmented MDP."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .envs import TabularMdp, validate_normalized
from .grid import AugPolicy, BudgetGrid, ValueTable
from .risk import FiniteDist, cvar_exact, cvar_from_pmf

TIE_TOL = 1e-12
MAX_ENUMERATION = 10**6


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    values: ValueTable
    policy: AugPolicy
    b_star_idx: int
    cvar: float

    @property
    def b_star(self) -> float:
        return self.values.grid.value(self.b_star_idx)


def best_budget(v1_row: np.ndarray, tau: float, grid: BudgetGrid) -> tuple[int, float]:
    """Grid argmax of ``b - V(b) / tau`` (smallest b among near-ties) and its value."""
    obj = grid.values - np.asarray(v1_row) / tau
    top = obj.max()
    idx = int(np.argmax(obj >= top - TIE_TOL))
    return idx, float(obj[idx])


def solve_optimal(mdp: TabularMdp, tau: float, grid: BudgetGrid, backend: str | None = None) -> OptimalSolution:
    """Optimal ``V*``, greedy policy, best initial budget and optimal CVaR.

    Rewards must be multiples of ``grid.eta``; ties in the action argmin go to
    the lowest action index.
    """
    mdp.grid_rewards(grid.n)  # raises on off-grid rewards
    N = np.ones((mdp.H, mdp.S, mdp.A))
    lo, _, pol, _ = kernels.plan(mdp, mdp.P, N, grid.n, 0.0, "exact", backend)
    b_idx, value = best_budget(lo[0, mdp.s1], tau, grid)
    return OptimalSolution(ValueTable(lo, grid), AugPolicy(pol, grid), b_idx, value)


def occupancy(mdp: TabularMdp, policy: AugPolicy, b0_idx: int, backend: str | None = None) -> np.ndarray:
    return kernels.occupancy(mdp, policy.actions, b0_idx, policy.grid.n, backend)


def returns_pmf(mdp: TabularMdp, policy: AugPolicy, b0_idx: int, backend: str | None = None) -> np.ndarray:
    """Probabilities of total return ``z / n`` for ``z = 0..n``."""
    return occupancy(mdp, policy, b0_idx, backend)[-1].sum(axis=0)


def returns_distribution(
    mdp: TabularMdp, policy: AugPolicy, b0: float | int, grid: BudgetGrid | None = None,
    backend: str | None = None,
) -> FiniteDist:
    """Exact law of the return of rolling in ``policy`` from ``(s1, b0)``."""
    grid = grid or policy.grid
    b0_idx = b0 if isinstance(b0, (int, np.integer)) else grid.index_of(b0)
    pmf = returns_pmf(mdp, policy, int(b0_idx), backend)
    return FiniteDist.from_arrays(grid.values, pmf)


def evaluate_policy_cvar(
    mdp: TabularMdp, policy: AugPolicy, b0: float | int, tau: float, grid: BudgetGrid | None = None,
    backend: str | None = None,
) -> float:
    """CVaR of the return of ``(policy, b0)`` in ``mdp``."""
    return cvar_exact(returns_distribution(mdp, policy, b0, grid, backend), tau)


def policy_value(mdp: TabularMdp, policy: AugPolicy, b0_idx: int, backend: str | None = None) -> float:
    """``V_1^rho(s1, b0) = E[(b0 - Z)^+]`` from the exact return law."""
    grid = policy.grid
    pmf = returns_pmf(mdp, policy, b0_idx, backend)
    return float(np.maximum(grid.value(b0_idx) - grid.values, 0.0) @ pmf)


def enumerate_optimal_tiny(mdp: TabularMdp, tau: float, grid: BudgetGrid, backend: str | None = None) -> float:
    """Best CVaR over every deterministic Markov augmented policy and every grid budget.

    Brute force: ``A ** (H * S * (n + 1))`` policies, each evaluated from every
    grid budget through its exact return law.
    """
    cells = mdp.H * mdp.S * grid.size
    count = mdp.A**cells
    if count > MAX_ENUMERATION:
        raise ValueError(f"{count} augmented policies exceed the enumeration guard of {MAX_ENUMERATION}")
    validate_normalized(mdp)
    mdp.grid_rewards(grid.n)
    shape = (mdp.H, mdp.S, grid.size)
    values = grid.values
    best = -np.inf
    for combo in itertools.product(range(mdp.A), repeat=cells):
        acts = np.array(combo, dtype=np.int64).reshape(shape)
        for b0 in range(grid.size):
            occ = kernels.occupancy(mdp, acts, b0, grid.n, backend)
            best = max(best, cvar_from_pmf(values, occ[-1].sum(axis=0), tau))
    return float(best)
