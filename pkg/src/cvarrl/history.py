"""Per-run records and exact regret accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEGATIVE_REGRET_TOL = 1e-9


class OracleInconsistency(RuntimeError):
    """A played arm or policy beat the supposed optimum."""


def compute_regret_series(picks, oracle_cvar: float, pick_cvars) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous and cumulative regret of a pick sequence.

    ``pick_cvars[k]`` is the exact CVaR of the k-th pick.  Shortfalls below
    ``-1e-9`` mean the oracle is wrong and raise; smaller negatives are rounding
    and are set to zero.
    """
    vals = np.asarray(pick_cvars, dtype=float)
    if len(picks) != vals.size:
        raise ValueError("picks and pick_cvars differ in length")
    inst = oracle_cvar - vals
    bad = np.flatnonzero(inst < -NEGATIVE_REGRET_TOL)
    if bad.size:
        k = int(bad[0])
        raise OracleInconsistency(
            f"episode {k + 1}: pick {picks[k]!r} has CVaR {vals[k]!r} above the oracle's {oracle_cvar!r}"
        )
    inst = np.maximum(inst, 0.0)
    return inst, np.cumsum(inst)


@dataclass(eq=False)
class RunHistory:
    """Everything one seeded run produced, episode by episode."""

    mode: str
    learner: str
    seed: int
    picks: list
    instant: np.ndarray
    cumulative: np.ndarray
    bonus: np.ndarray
    b_hat: np.ndarray
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return int(self.instant.size)

    def at(self, episode: int) -> tuple[float, float]:
        """(instant, cumulative) regret at a 1-based episode number."""
        if episode < 1 or episode > self.K:
            raise IndexError(f"episode {episode} outside 1..{self.K}")
        return float(self.instant[episode - 1]), float(self.cumulative[episode - 1])

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "learner": self.learner,
            "seed": self.seed,
            "picks": [p if isinstance(p, (int, str)) else list(p) for p in self.picks],
            "instant": self.instant.tolist(),
            "cumulative": self.cumulative.tolist(),
            "bonus": self.bonus.tolist(),
            "b_hat": [None if np.isnan(b) else float(b) for b in self.b_hat],
            "meta": self.meta,
            "diagnostics": self.diagnostics,
            "snapshots": self.snapshots,
        }
