"""Bandit and tabular episodic environments, the seeded tape and hard instances."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import AugPolicy, BudgetGrid
from .risk import DistributionError, FiniteDist, cvar_exact

ROW_TOL = 1e-12
NORMALIZED_TOL = 1e-12
MAX_TREE_STATES = 200_000


class InstanceError(ValueError):
    """Structurally invalid environment or generator parameters."""


class NormalizationError(InstanceError):
    """Some trajectory can collect more than 1 in total reward."""


class InvariantError(RuntimeError):
    """An internal invariant failed; indicates a bug, not bad input."""


@dataclass(frozen=True)
class GridRewards:
    """Reward laws as padded index/probability arrays on a 1/n grid."""

    idx: np.ndarray  # (H, S, A, M) int64 reward index
    prob: np.ndarray  # (H, S, A, M)
    length: np.ndarray  # (H, S, A) number of used atoms
    n: int


@dataclass(eq=False)
class MabInstance:
    arms: tuple[FiniteDist, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arms = tuple(self.arms)
        if not self.arms:
            raise InstanceError("a bandit needs at least one arm")
        for a, d in enumerate(self.arms):
            if d.min() < 0.0 or d.max() > 1.0:
                raise InstanceError(f"arm {a} has atoms outside [0, 1]")

    @property
    def A(self) -> int:
        return len(self.arms)

    def arm_cvars(self, tau: float) -> np.ndarray:
        return np.array([cvar_exact(d, tau) for d in self.arms])

    @cached_property
    def _cums(self) -> list[np.ndarray]:
        return [np.cumsum(d.probs) for d in self.arms]

    def pull(self, a: int, u: float) -> float:
        cum = self._cums[a]
        k = min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)
        return float(self.arms[a].values[k])

    def to_json(self) -> dict:
        out = {"arms": [d.to_json() for d in self.arms]}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "MabInstance":
        try:
            arms = [FiniteDist.from_json(a) for a in doc["arms"]]
        except (KeyError, TypeError, DistributionError) as exc:
            raise InstanceError(f"bad bandit document: {exc}") from exc
        return cls(tuple(arms), dict(doc.get("meta", {})))


@dataclass(eq=False)
class TabularMdp:
    """Finite-horizon MDP with known reward laws ``R[h][s][a]`` and kernels ``P[h, s, a]``."""

    S: int
    A: int
    H: int
    s1: int
    P: np.ndarray
    R: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=float)
        if self.P.shape != (self.H, self.S, self.A, self.S):
            raise InstanceError(f"P has shape {self.P.shape}, expected {(self.H, self.S, self.A, self.S)}")
        if not 0 <= self.s1 < self.S:
            raise InstanceError("initial state out of range")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(-1) - 1.0) > ROW_TOL * self.S):
            raise InstanceError("every transition row must be a probability vector")
        self.R = tuple(tuple(tuple(self.R[h][s]) for s in range(self.S)) for h in range(self.H))
        for h in range(self.H):
            for s in range(self.S):
                if len(self.R[h][s]) != self.A:
                    raise InstanceError("reward table must be H x S x A")
                for a, d in enumerate(self.R[h][s]):
                    if d.min() < 0.0:
                        raise InstanceError(f"negative reward atom at (h={h}, s={s}, a={a})")
        self.P.setflags(write=False)

    @cached_property
    def P_cum(self) -> np.ndarray:
        return np.cumsum(self.P, axis=-1)

    @cached_property
    def _reward_cums(self) -> list:
        return [[[np.cumsum(d.probs) for d in row] for row in layer] for layer in self.R]

    def draw_reward(self, h: int, s: int, a: int, u: float) -> float:
        cum = self._reward_cums[h][s][a]
        k = min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)
        return float(self.R[h][s][a].values[k])

    def draw_next(self, h: int, s: int, a: int, u: float) -> int:
        row = self.P_cum[h, s, a]
        return min(int(np.searchsorted(row, u, side="right")), self.S - 1)

    def grid_rewards(self, n: int) -> GridRewards:
        """Reward laws as grid indices; raises if an atom is off the 1/n grid."""
        cache = self.__dict__.setdefault("_grid_cache", {})
        if n in cache:
            return cache[n]
        grid = BudgetGrid(n)
        M = max(len(d.values) for layer in self.R for row in layer for d in row)
        idx = np.zeros((self.H, self.S, self.A, M), dtype=np.int64)
        prob = np.zeros((self.H, self.S, self.A, M))
        length = np.zeros((self.H, self.S, self.A), dtype=np.int64)
        for h in range(self.H):
            for s in range(self.S):
                for a in range(self.A):
                    d = self.R[h][s][a]
                    for j, (v, p) in enumerate(zip(d.values, d.probs)):
                        if not grid.on_grid(v):
                            raise InstanceError(
                                f"reward atom {v!r} at (h={h}, s={s}, a={a}) is off the 1/{n} grid"
                            )
                        idx[h, s, a, j] = round(v * n)
                        prob[h, s, a, j] = p
                    length[h, s, a] = len(d.values)
        out = GridRewards(idx, prob, length, n)
        cache[n] = out
        return out

    def reward_matrix(self, n: int) -> np.ndarray:
        """Dense reward pmfs ``(H, S, A, n + 1)`` over grid indices."""
        gr = self.grid_rewards(n)
        dense = np.zeros((self.H, self.S, self.A, n + 1))
        for h in range(self.H):
            for s in range(self.S):
                for a in range(self.A):
                    k = gr.length[h, s, a]
                    np.add.at(dense[h, s, a], gr.idx[h, s, a, :k], gr.prob[h, s, a, :k])
        return dense

    def to_json(self) -> dict:
        out = {
            "S": self.S,
            "A": self.A,
            "H": self.H,
            "s1": self.s1,
            "P": self.P.tolist(),
            "R": [[[d.to_json() for d in row] for row in layer] for layer in self.R],
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "TabularMdp":
        try:
            R = [[[FiniteDist.from_json(c) for c in row] for row in layer] for layer in doc["R"]]
            return cls(
                int(doc["S"]), int(doc["A"]), int(doc["H"]), int(doc["s1"]),
                np.array(doc["P"], dtype=float), R, dict(doc.get("meta", {})),
            )
        except (KeyError, TypeError, DistributionError) as exc:
            raise InstanceError(f"bad MDP document: {exc}") from exc


@dataclass(eq=False)
class DiscretizedMdp:
    """``base`` with every reward pushed forward through ``phi`` on the 1/n grid."""

    base: TabularMdp
    grid: BudgetGrid
    mdp: TabularMdp

    @property
    def eta(self) -> float:
        return self.grid.eta


def load_instance(path: str | Path) -> MabInstance | TabularMdp:
    doc = json.loads(Path(path).read_text())
    return instance_from_json(doc)


def instance_from_json(doc: dict) -> MabInstance | TabularMdp:
    if "arms" in doc:
        return MabInstance.from_json(doc)
    return TabularMdp.from_json(doc)


# --------------------------------------------------------------------------- tape

_KIND_CODES = {"arm": 1, "r": 2, "p": 3, "pick": 4, "aux": 5}


class RngTape:
    """Per-cell i.i.d. uniform streams derived from one master seed.

    The ``j``-th request for a cell always returns the ``j``-th uniform of that
    cell's stream, whatever order other cells are visited in.
    """

    BLOCK = 256

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[tuple, list] = {}

    def _stream(self, key: tuple) -> list:
        st = self._streams.get(key)
        if st is None:
            code = (_KIND_CODES[key[0]],) + tuple(int(k) for k in key[1:])
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=code)
            st = [np.random.Generator(np.random.PCG64(ss)), np.empty(0), 0, 0]
            self._streams[key] = st
        return st

    def draw(self, *key) -> float:
        st = self._stream(key)
        gen, buf, pos, used = st
        if pos >= buf.size:
            buf = gen.random(self.BLOCK)
            st[1], pos = buf, 0
        st[2] = pos + 1
        st[3] = used + 1
        return float(buf[pos])

    def count(self, *key) -> int:
        st = self._streams.get(key)
        return 0 if st is None else st[3]

    def cell_sequence(self, *key, length: int) -> np.ndarray:
        """First ``length`` uniforms of a cell, without consuming them."""
        code = (_KIND_CODES[key[0]],) + tuple(int(k) for k in key[1:])
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=code)))
        out = []
        while len(out) < length:
            out.extend(gen.random(self.BLOCK).tolist())
        return np.array(out[:length])


# --------------------------------------------------------------------- roll-outs


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    budgets: tuple[int, ...]  # budget index at each step, before the reward
    next_states: tuple[int, ...]

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))


def sample_episode(mdp: TabularMdp, policy: AugPolicy, b0: float | int, tape: RngTape) -> Trajectory:
    """Roll in ``policy`` from ``(s1, b0)``, tracking the budget as ``b - r``.

    ``b0`` is either an on-grid float budget or (if ``int``) a grid index.
    Draws come from the tape cells ``("r", h, s, a)`` and ``("p", h, s, a)``.
    """
    grid = policy.grid
    b = b0 if isinstance(b0, (int, np.integer)) else grid.index_of(b0)
    s = mdp.s1
    states, actions, rewards, budgets, nexts = [], [], [], [], []
    for h in range(mdp.H):
        a = policy.act(h, s, b)
        r = mdp.draw_reward(h, s, a, tape.draw("r", h, s, a))
        s_next = mdp.draw_next(h, s, a, tape.draw("p", h, s, a))
        r_idx = round(r * grid.n)
        if abs(r * grid.n - r_idx) > 1e-9:
            raise InvariantError(f"off-grid reward {r} during a grid roll-out")
        states.append(s)
        actions.append(a)
        rewards.append(r)
        budgets.append(b)
        nexts.append(s_next)
        b -= r_idx
        s = s_next
    return Trajectory(tuple(states), tuple(actions), tuple(rewards), tuple(budgets), tuple(nexts))


def coupled_rollout(
    mdp: TabularMdp, eta: float, rho: AugPolicy, b0: float | int, tape: RngTape
) -> tuple[float, float]:
    """One shared-randomness roll-out of ``rho`` in disc(M) and of its adapted policy in M.

    Raw rewards are drawn from ``mdp``; the discretized copies ``phi(r)`` drive
    the budget, so both runs visit the same states and take the same actions.
    Returns ``(Z_disc, Z_adapted)``.
    """
    grid = rho.grid
    if abs(grid.eta - BudgetGrid.from_eta(eta).eta) > 1e-15:
        raise ValueError("policy grid does not match eta")
    b = b0 if isinstance(b0, (int, np.integer)) else grid.index_of(b0)
    s = mdp.s1
    z_disc_idx = 0
    z_raw = 0.0
    for h in range(mdp.H):
        a = rho.act(h, s, b)
        r = mdp.draw_reward(h, s, a, tape.draw("r", h, s, a))
        k = grid.phi_index(r)
        z_disc_idx += k
        z_raw += r
        b -= k
        s = mdp.draw_next(h, s, a, tape.draw("p", h, s, a))
    z_disc = z_disc_idx / grid.n
    slack = 1e-12
    if not (z_disc - mdp.H * grid.eta - slack <= z_raw <= z_disc + slack):
        raise InvariantError(f"coupling sandwich violated: disc={z_disc}, adapted={z_raw}")
    return z_disc, z_raw


def discretize_mdp(mdp: TabularMdp, eta: float) -> DiscretizedMdp:
    """Push every reward law through ``phi`` (round up to the eta-grid, cap at 1)."""
    grid = BudgetGrid.from_eta(eta)
    R = [
        [
            [FiniteDist.from_arrays([grid.phi(v) for v in d.values], d.probs) for d in row]
            for row in layer
        ]
        for layer in mdp.R
    ]
    meta = dict(mdp.meta, discretized_eta=grid.eta)
    return DiscretizedMdp(mdp, grid, TabularMdp(mdp.S, mdp.A, mdp.H, mdp.s1, mdp.P, R, meta))


# ------------------------------------------------------------------- validation


def validate_normalized(mdp: TabularMdp) -> float:
    """Largest total reward any trajectory from ``s1`` can collect.

    Raises :class:`NormalizationError` naming a maximizing path when it exceeds 1.
    """
    best = np.zeros(mdp.S)
    choice: list[list[tuple[int, int]]] = []
    for h in reversed(range(mdp.H)):
        new = np.empty(mdp.S)
        pick = []
        for s in range(mdp.S):
            top, arg = -math.inf, (0, 0)
            for a in range(mdp.A):
                succ = np.flatnonzero(mdp.P[h, s, a] > 0)
                j = succ[np.argmax(best[succ])]
                val = mdp.R[h][s][a].max() + best[j]
                if val > top:
                    top, arg = val, (a, int(j))
            new[s] = top
            pick.append(arg)
        best = new
        choice.insert(0, pick)
    total = float(best[mdp.s1])
    if total > 1.0 + NORMALIZED_TOL:
        s, path = mdp.s1, []
        for h in range(mdp.H):
            a, nxt = choice[h][s]
            path.append(f"(h={h}, s={s}, a={a})")
            s = nxt
        raise NormalizationError(f"max return {total:.6g} > 1 along " + " -> ".join(path))
    return total


# -------------------------------------------------------------------- generators


def make_hard_mab(tau: float, A: int, K: int, flagged_arm: int | None = None) -> MabInstance:
    """Two-level Bernoulli bandit: one arm ``Ber(1 - tau + eps)``, the rest ``Ber(1 - tau)``.

    ``eps = sqrt((A - 1) tau / (8K))``; every other arm trails the flagged one by
    ``eps / tau`` in CVaR.  ``flagged_arm`` defaults to the last arm.
    """
    if not 0.0 < tau < 0.5:
        raise InstanceError("tau must lie in (0, 1/2)")
    if A < 2:
        raise InstanceError("need at least two arms")
    if K < math.sqrt((A - 1) / (8 * tau)):
        raise InstanceError("K below the construction's minimum episode count")
    flagged = A - 1 if flagged_arm is None else int(flagged_arm)
    if not 0 <= flagged < A:
        raise InstanceError("flagged arm out of range")
    eps = math.sqrt((A - 1) * tau / (8 * K))
    if eps > tau:
        raise InstanceError(f"eps={eps} exceeds tau; outside the Bernoulli CVaR regime")
    arms = [_two_point(tau - eps if a == flagged else tau) for a in range(A)]
    meta = {"generator": "hard_mab", "tau": tau, "K": K, "eps": eps, "flagged": flagged, "gap": eps / tau}
    return MabInstance(tuple(arms), meta)


def _two_point(p_zero: float) -> FiniteDist:
    # mass at 0 given directly so that P(X=0) = tau - eps carries no 1-(1-x) rounding
    return FiniteDist.from_arrays([0.0, 1.0], [p_zero, 1.0 - p_zero])


def tree_size(A: int, H: int) -> int:
    return sum(A**d for d in range(H))


def make_tree_mdp(tau: float, A: int, H: int, K: int, flagged: int | None = None) -> TabularMdp:
    """A-ary tree of depth H with Bernoulli rewards only at the leaf step.

    State ``0`` is the root; the children of node ``i`` at depth ``d`` are laid
    out breadth-first.  The ``A^H`` action sequences act as bandit arms, and the
    sequence with base-A digits ``flagged`` (default: the last one) pays
    ``Ber(1 - tau + eps)`` with ``eps = sqrt(S (A - 1) tau / (8K))``.
    """
    if not 0.0 < tau < 0.5:
        raise InstanceError("tau must lie in (0, 1/2)")
    if A < 2 or H < 1:
        raise InstanceError("need A >= 2 and H >= 1")
    S = tree_size(A, H)
    if S > MAX_TREE_STATES:
        raise InstanceError(f"tree has {S} states, above the {MAX_TREE_STATES} guard")
    n_paths = A**H
    if K < math.sqrt(S * (A - 1) / (8 * tau)):
        raise InstanceError("K below the construction's minimum episode count")
    flagged = n_paths - 1 if flagged is None else int(flagged)
    if not 0 <= flagged < n_paths:
        raise InstanceError("flagged path out of range")
    eps = math.sqrt(S * (A - 1) * tau / (8 * K))
    if eps > tau:
        raise InstanceError(f"eps={eps} exceeds tau; outside the Bernoulli CVaR regime")

    depth_start = [tree_size(A, d) for d in range(H)]
    P = np.zeros((H, S, A, S))
    P[:, np.arange(S), :, np.arange(S)] = 1.0  # off-layer states self-loop; never reached
    zero = FiniteDist.point(0.0)
    R = [[[zero] * A for _ in range(S)] for _ in range(H)]
    for h in range(H - 1):
        for i in range(A**h):
            node = depth_start[h] + i
            P[h, node, :, :] = 0.0
            for a in range(A):
                P[h, node, a, depth_start[h + 1] + i * A + a] = 1.0
    digits = [(flagged // A ** (H - 1 - j)) % A for j in range(H)]
    flagged_leaf = sum(d * A ** (H - 2 - j) for j, d in enumerate(digits[:-1]))
    for i in range(A ** (H - 1)):
        leaf = depth_start[H - 1] + i
        for a in range(A):
            is_flagged = i == flagged_leaf and a == digits[-1]
            R[H - 1][leaf][a] = _two_point(tau - eps if is_flagged else tau)
    meta = {
        "generator": "tree", "tau": tau, "K": K, "eps": eps, "flagged": flagged,
        "gap": eps / tau, "flagged_actions": digits,
    }
    return TabularMdp(S, A, H, 0, P, R, meta)


def _composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    cuts = np.sort(rng.integers(0, total + 1, size=parts - 1))
    edges = np.concatenate(([0], cuts, [total]))
    return np.diff(edges).astype(int).tolist()


def make_random_mdp(
    S: int,
    A: int,
    H: int,
    n: int,
    seed: int,
    *,
    max_atoms: int = 3,
    dirichlet: float = 1.0,
    off_grid: bool = False,
) -> TabularMdp:
    """Random normalized MDP with Dirichlet kernels.

    Each step gets a reward cap (a random composition of 1 into H parts on the
    1/n grid); reward laws put random mass on at most ``max_atoms`` values in
    ``[0, cap]``.  With ``off_grid`` the atoms are arbitrary reals instead of
    grid points, for discretization tests.
    """
    rng = np.random.default_rng(seed)
    caps = _composition(n, H, rng)
    P = rng.dirichlet(np.full(S, dirichlet), size=(H, S, A))
    R = []
    for h in range(H):
        layer = []
        for _ in range(S):
            row = []
            for _ in range(A):
                k = int(rng.integers(1, max_atoms + 1))
                if off_grid:
                    vals = rng.uniform(0.0, caps[h] / n, size=k)
                else:
                    vals = rng.integers(0, caps[h] + 1, size=k) / n
                probs = rng.dirichlet(np.ones(k))
                row.append(FiniteDist.from_arrays(vals, probs))
            layer.append(row)
        R.append(layer)
    meta = {"generator": "random", "S": S, "A": A, "H": H, "n": n, "seed": seed, "off_grid": off_grid}
    return TabularMdp(S, A, H, 0, P, R, meta)


def make_dense_reward_mdp(S: int, A: int, H: int, seed: int, atoms: int = 400) -> TabularMdp:
    """Random MDP whose only reward arrives at step H with ``atoms`` off-grid support points.

    Discretizing it at precision eta leaves about ``1/eta`` reward atoms per cell,
    the regime where planning cost grows as ``eta^-2``.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    zero = FiniteDist.point(0.0)
    R = [[[zero] * A for _ in range(S)] for _ in range(H - 1)]
    last = []
    for _ in range(S):
        last.append([
            FiniteDist.from_arrays(rng.uniform(0.0, 1.0, size=atoms), rng.dirichlet(np.ones(atoms)))
            for _ in range(A)
        ])
    R.append(last)
    return TabularMdp(S, A, H, 0, P, R, {"generator": "dense", "seed": seed, "atoms": atoms})


def chain_mdp(H: int, reward: float, S: int = 1) -> TabularMdp:
    """Single-action chain paying a point mass ``reward`` at every step."""
    P = np.zeros((H, S, 1, S))
    P[..., 0] = 1.0
    d = FiniteDist.point(reward)
    R = [[[d] for _ in range(S)] for _ in range(H)]
    return TabularMdp(S, 1, H, 0, P, R, {"generator": "chain"})


def bandit_as_mdp(arms: Sequence[FiniteDist]) -> TabularMdp:
    """One-state, one-step MDP whose actions are the given arms."""
    A = len(arms)
    P = np.ones((1, 1, A, 1))
    return TabularMdp(1, A, 1, 0, P, [[list(arms)]], {"generator": "bandit"})
