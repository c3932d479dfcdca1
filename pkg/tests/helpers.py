"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from cvarrl.risk import FiniteDist


def random_dist(rng: np.random.Generator, max_atoms: int = 8, lo: float = 0.0, hi: float = 1.0) -> FiniteDist:
    k = int(rng.integers(1, max_atoms + 1))
    return FiniteDist.from_arrays(rng.uniform(lo, hi, size=k), rng.dirichlet(np.ones(k)))
