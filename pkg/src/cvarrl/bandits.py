"""CVaR bandit learners: Bernstein-UCB, Brown-UCB and uniform sampling."""

from __future__ import annotations

import bisect
import math
from typing import Callable

import numpy as np

from .envs import MabInstance, RngTape
from .history import RunHistory, compute_regret_series
from .risk import quantile

PHI = (1.0 + math.sqrt(5.0)) / 2.0
INV_PHI = 1.0 / PHI
TIE_TOL = 1e-12
LEARNERS = ("bernstein-ucb", "brown-ucb", "uniform-random")


def mab_bonus(n: int, A: int, K: int, delta: float, tau: float) -> float:
    """Bernstein-style bonus ``sqrt(2 tau log(AK/delta) / n) + log(AK/delta) / n``."""
    if n < 1:
        raise ValueError("count must be at least 1")
    log_term = math.log(A * K / delta)
    return math.sqrt(2.0 * tau * log_term / n) + log_term / n


def brown_bonus(n: int, delta: float, tau: float) -> float:
    """Hoeffding-style bonus ``sqrt(5 tau log(3/delta) / n)``; optimistic only for continuous rewards."""
    return math.sqrt(5.0 * tau * math.log(3.0 / delta) / n)


def golden_section_max(
    f: Callable[[float], float], eps: float, lipschitz: float = 1.0, lo: float = 0.0, hi: float = 1.0
) -> tuple[float, float]:
    """Maximize a concave (unimodal) ``f`` on ``[lo, hi]`` to within ``eps`` in value.

    The bracket is shrunk until its width is at most ``eps / lipschitz``; the
    endpoints are compared at the end so boundary maxima are not lost.
    Returns ``(argmax, f(argmax))``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tol = eps / lipschitz
    iters = max(0, math.ceil(math.log((hi - lo) / tol) / math.log(PHI)))
    a, c = lo, hi
    x1 = c - INV_PHI * (c - a)
    x2 = a + INV_PHI * (c - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 >= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - INV_PHI * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (c - a)
            f2 = f(x2)
    candidates = [(x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))]
    for _, v in candidates:
        if not math.isfinite(v):
            raise FloatingPointError("objective returned a non-finite value")
    best = candidates[0]
    for cand in candidates[1:]:
        if cand[1] > best[1]:
            best = cand
    return best


class ArmLog:
    """Sorted, run-length compressed reward log of one arm."""

    __slots__ = ("values", "counts", "_cnt", "_sum", "pulls")

    def __init__(self):
        self.values: list[float] = []
        self.counts: list[int] = []
        self.pulls = 0
        self._cnt = np.zeros(1)
        self._sum = np.zeros(1)

    def add(self, r: float) -> None:
        i = bisect.bisect_left(self.values, r)
        if i < len(self.values) and self.values[i] == r:
            self.counts[i] += 1
        else:
            self.values.insert(i, r)
            self.counts.insert(i, 1)
        self.pulls += 1
        c = np.asarray(self.counts, dtype=float)
        self._cnt = np.concatenate(([0.0], np.cumsum(c)))
        self._sum = np.concatenate(([0.0], np.cumsum(c * np.asarray(self.values))))

    def shortfall_sum(self, b: float) -> float:
        """``sum_i (b - r_i)^+`` over the logged rewards."""
        k = bisect.bisect_left(self.values, b)
        return b * self._cnt[k] - self._sum[k]

    def sorted_rewards(self) -> np.ndarray:
        return np.repeat(self.values, self.counts)


class BanditState:
    """Counts, reward logs and cached per-arm indices for an index learner."""

    def __init__(self, A: int, K: int, tau: float, delta: float, eps: float | None = None, kind: str = "bernstein-ucb"):
        if kind not in ("bernstein-ucb", "brown-ucb"):
            raise ValueError(f"not an index learner: {kind}")
        self.A, self.K, self.tau, self.delta, self.kind = A, K, tau, delta, kind
        self.eps = math.sqrt(A / (2.0 * tau * K)) if eps is None else eps
        self.logs = [ArmLog() for _ in range(A)]
        self.k = 1
        self._index = [None] * A  # (value, b_hat) per arm; None = stale

    def count(self, a: int) -> int:
        return max(1, self.logs[a].pulls)

    def bonus(self, a: int) -> float:
        n = self.count(a)
        if self.kind == "bernstein-ucb":
            return mab_bonus(n, self.A, self.K, self.delta, self.tau)
        return brown_bonus(n, self.delta, self.tau)

    def mu_hat(self, b: float, a: int) -> float:
        return self.logs[a].shortfall_sum(b) / self.count(a)

    def objective(self, a: int) -> Callable[[float], float]:
        """``b -> b - (mu_hat(b, a) - Bon(a)) / tau``."""
        log, n, bon, tau = self.logs[a], self.count(a), self.bonus(a), self.tau
        return lambda b: b - (log.shortfall_sum(b) / n - bon) / tau

    def arm_index(self, a: int) -> tuple[float, float]:
        cached = self._index[a]
        if cached is None:
            b, v = golden_section_max(self.objective(a), self.eps, lipschitz=1.0 + 1.0 / self.tau)
            cached = self._index[a] = (v, b)
        return cached

    def observe(self, a: int, r: float) -> None:
        self.logs[a].add(r)
        self._index[a] = None
        self.k += 1


def bernstein_ucb_select(state: BanditState) -> tuple[int, np.ndarray, np.ndarray]:
    """Arm with the largest optimistic CVaR index.

    Near-ties (within 1e-12) go to the lowest arm index.
    Returns ``(arm, index_values, b_hats)``.
    """
    idx = np.empty(state.A)
    bh = np.empty(state.A)
    for a in range(state.A):
        idx[a], bh[a] = state.arm_index(a)
    top = idx.max()
    arm = int(np.flatnonzero(idx >= top - TIE_TOL)[0])
    return arm, idx, bh


def run_bandit(
    env: MabInstance,
    learner: str,
    K: int,
    delta: float,
    tau: float,
    tape: RngTape,
    eps: float | None = None,
    diagnose: bool = False,
) -> RunHistory:
    """Play ``K`` episodes and charge each pull its exact CVaR shortfall.

    With ``diagnose`` the run also tracks, per episode, the pessimism event at
    the pulled arm's true quantile and the optimism of the selected index.
    """
    if learner not in LEARNERS:
        raise ValueError(f"unknown learner {learner!r}; choose from {LEARNERS}")
    A = env.A
    cvars = env.arm_cvars(tau)
    best = float(cvars.max())
    picks = np.zeros(K, dtype=np.int64)
    bonus = np.zeros(K)
    b_hat = np.full(K, np.nan)
    state = None if learner == "uniform-random" else BanditState(A, K, tau, delta, eps, learner)
    if diagnose:
        true_q = [
            arm.max() if tau == 1.0 else quantile(arm, tau) for arm in env.arms
        ]
        true_mu = [float(np.maximum(q - arm.values, 0.0) @ arm.probs) for q, arm in zip(true_q, env.arms)]
        pess_ok = optim_ok = True
        pess_first = optim_first = None
    for k in range(K):
        if state is None:
            a = min(int(tape.draw("pick", k) * A), A - 1)
        else:
            a, idx, bh = bernstein_ucb_select(state)
            bonus[k] = state.bonus(a)
            b_hat[k] = bh[a]
            if diagnose:
                lhs = state.mu_hat(true_q[a], a) - bonus[k]
                if pess_ok and lhs > true_mu[a] + 1e-12:
                    pess_ok, pess_first = False, k + 1
                if optim_ok and idx[a] < best - state.eps - 1e-12:
                    optim_ok, optim_first = False, k + 1
        r = env.pull(a, tape.draw("arm", a))
        if state is not None:
            state.observe(a, r)
        picks[k] = a
    inst, cum = compute_regret_series(picks, best, cvars[picks])
    hist = RunHistory(
        "mab", learner, tape.seed, picks.tolist(), inst, cum, bonus, b_hat,
        meta={"tau": tau, "K": K, "delta": delta, "A": A, "cvar_star": best,
              "eps": None if state is None else state.eps},
    )
    if diagnose and state is not None:
        hist.diagnostics = {
            "pessimism": pess_ok, "pessimism_first_violation": pess_first,
            "optimism": optim_ok, "optimism_first_violation": optim_first,
        }
    return hist
