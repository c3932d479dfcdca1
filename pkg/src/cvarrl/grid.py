"""Budget grid, reward discretization and the augmented-policy / value containers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SNAP_TOL = 1e-9


@dataclass(frozen=True)
class BudgetGrid:
    """Budgets ``{0, 1/n, ..., 1}`` addressed by integer index.

    Budget arithmetic is done on indices only, so ``b - r`` never drifts off
    the grid.  Negative budgets (reachable during roll-outs) are represented by
    negative indices down to ``-n``.
    """

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid needs at least one step")

    @classmethod
    def from_eta(cls, eta: float) -> "BudgetGrid":
        """Grid with step ``1/ceil(1/eta)`` (equal to eta when 1/eta is an integer)."""
        if not 0.0 < eta < 1.0 + 1e-12:
            raise ValueError(f"eta={eta} outside (0, 1)")
        return cls(max(1, math.ceil(1.0 / eta - SNAP_TOL)))

    @property
    def eta(self) -> float:
        return 1.0 / self.n

    @property
    def size(self) -> int:
        return self.n + 1

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def value(self, idx: int) -> float:
        return idx / self.n

    def index_of(self, b: float) -> int:
        """Index of an on-grid budget; raises if ``b`` is off the grid or outside [0, 1]."""
        x = b * self.n
        k = round(x)
        if abs(x - k) > SNAP_TOL * max(1.0, self.n) or not 0 <= k <= self.n:
            raise ValueError(f"budget {b} is not a point of the 1/{self.n} grid in [0, 1]")
        return int(k)

    def phi_index(self, r: float) -> int:
        """Index of ``phi(r) = eta * ceil(r / eta)`` capped at 1."""
        x = r * self.n
        k = round(x)
        idx = k if abs(x - k) <= SNAP_TOL else math.ceil(x)
        return int(min(max(idx, 0), self.n))

    def phi(self, r: float) -> float:
        return self.phi_index(r) / self.n

    def on_grid(self, r: float) -> bool:
        x = r * self.n
        return abs(x - round(x)) <= SNAP_TOL


@dataclass(frozen=True, eq=False)
class AugPolicy:
    """Deterministic Markov policy on augmented states ``(s, b)``.

    ``actions[h, s, i]`` is the action at step ``h`` (0-based), state ``s`` and
    budget ``i / n``.  Negative budgets use the action stored at budget 0.
    """

    actions: np.ndarray
    grid: BudgetGrid

    def __post_init__(self):
        if self.actions.ndim != 3 or self.actions.shape[2] != self.grid.size:
            raise ValueError("actions must have shape (H, S, n + 1)")

    def act(self, h: int, s: int, b_idx: int) -> int:
        return int(self.actions[h, s, max(b_idx, 0)])

    def digest(self) -> str:
        import hashlib

        return hashlib.sha1(np.ascontiguousarray(self.actions, dtype=np.int64).tobytes()).hexdigest()[:12]

    @classmethod
    def constant(cls, H: int, S: int, grid: BudgetGrid, action: int = 0) -> "AugPolicy":
        return cls(np.full((H, S, grid.size), action, dtype=np.int64), grid)


@dataclass(frozen=True, eq=False)
class ValueTable:
    """``v[h, s, i]`` for ``h = 0..H`` (layer H is the terminal ``b^+``)."""

    v: np.ndarray
    grid: BudgetGrid

    def at(self, h: int, s: int, b_idx: int) -> float:
        return 0.0 if b_idx < 0 else float(self.v[h, s, b_idx])
