"""Backend selection for the planning and occupancy kernels.

The compiled core (``_ckernels``) is used when it imports; otherwise the NumPy
fallback in ``_pykernels``.  Set ``CVARRL_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

MODES = {"exact": 0, "hoeffding": 1, "bernstein": 2}

_compiled = None
if os.environ.get("CVARRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
AVAILABLE = ("cython", "python") if _compiled is not None else ("python",)


class BudgetOverflow(RuntimeError):
    """A roll-out collected more reward than the grid's extended budget range allows."""


def _resolve(backend: str | None) -> str:
    backend = backend or BACKEND
    if backend not in AVAILABLE:
        raise ValueError(f"kernel backend {backend!r} unavailable (have {AVAILABLE})")
    return backend


def _shift_ops(mdp, n: int) -> np.ndarray:
    cache = mdp.__dict__.setdefault("_shift_cache", {})
    if n not in cache:
        cache[n] = _pykernels.shift_operators(mdp.reward_matrix(n))
    return cache[n]


def plan(mdp, P: np.ndarray, N: np.ndarray, n: int, L: float, mode: str, backend: str | None = None):
    """Run one backward induction on the 1/n grid.

    ``P`` is the kernel to plan with (true or empirical), ``N`` the floored visit
    counts ``(H, S, A)``.  Returns ``(lo, hi, policy, bonus)`` arrays.
    """
    m = MODES[mode]
    P = np.ascontiguousarray(P, dtype=float)
    N = np.ascontiguousarray(N, dtype=float)
    if _resolve(backend) == "cython":
        gr = mdp.grid_rewards(n)
        return _compiled.plan(P, N, gr.idx, gr.prob, gr.length, n, float(L), m)
    return _pykernels.plan(P, N, _shift_ops(mdp, n), n, float(L), m)


def occupancy(mdp, policy_actions: np.ndarray, b0_idx: int, n: int, backend: str | None = None) -> np.ndarray:
    """``occ[h, s, z]`` of rolling in ``policy_actions`` from ``(s1, b0)`` in the true MDP."""
    gr = mdp.grid_rewards(n)
    pol = np.ascontiguousarray(policy_actions, dtype=np.int64)
    if _resolve(backend) == "cython":
        occ = _compiled.occupancy(mdp.P, gr.idx, gr.prob, gr.length, pol, mdp.s1, int(b0_idx), n)
    else:
        occ = _pykernels.occupancy(mdp.P, gr.idx, gr.prob, gr.length, pol, mdp.s1, int(b0_idx), n)
    if occ is None:
        raise BudgetOverflow("a trajectory collects more than 1; is the MDP normalized?")
    return occ
