"""Exact and empirical CVaR for finite distributions.

All distributions are finite atom lists, so every quantity here is computed
exactly (up to floating point) rather than estimated.  The CVaR convention is
the lower tail of a reward: ``CVaR_tau(X) = sup_b {b - E[(b - X)^+] / tau}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

PROB_TOL = 1e-12


class DistributionError(ValueError):
    """Malformed distribution or argument outside an operation's domain."""


@dataclass(frozen=True, eq=False)
class FiniteDist:
    """Probability mass function on finitely many points of [-1, 1].

    ``values`` is strictly increasing, ``probs`` is positive and sums to one.
    Build instances with :meth:`from_atoms` or :meth:`from_arrays`, which
    merge duplicate values, drop zero-mass atoms and renormalize.
    """

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_arrays(cls, values: Sequence[float], probs: Sequence[float]) -> "FiniteDist":
        v = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise DistributionError("values and probs must be non-empty and of equal length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise DistributionError("non-finite atom")
        if np.any(p < -PROB_TOL):
            raise DistributionError("negative probability")
        if np.any(v < -1.0 - 1e-12) or np.any(v > 1.0 + 1e-12):
            raise DistributionError("atom values must lie in [-1, 1]")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL * max(1, v.size):
            raise DistributionError(f"probabilities sum to {total!r}, not 1")
        order = np.argsort(v, kind="stable")
        v, p = v[order], np.clip(p[order], 0.0, None)
        uniq, inverse = np.unique(v, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, p)
        keep = merged > 0.0
        uniq, merged = uniq[keep], merged[keep]
        merged = merged / merged.sum()
        uniq.setflags(write=False)
        merged.setflags(write=False)
        return cls(uniq, merged)

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "FiniteDist":
        atoms = list(atoms)
        if not atoms:
            raise DistributionError("empty atom list")
        values, probs = zip(*atoms)
        return cls.from_arrays(values, probs)

    @classmethod
    def point(cls, value: float) -> "FiniteDist":
        return cls.from_arrays([value], [1.0])

    @classmethod
    def bernoulli(cls, p: float) -> "FiniteDist":
        """Law of a {0, 1} variable with P(X = 1) = p."""
        if not 0.0 <= p <= 1.0:
            raise DistributionError(f"Bernoulli parameter {p} outside [0, 1]")
        return cls.from_arrays([0.0, 1.0], [1.0 - p, p])

    @classmethod
    def empirical(cls, samples: Sequence[float]) -> "FiniteDist":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise DistributionError("empty sample set")
        return cls.from_arrays(x, np.full(x.size, 1.0 / x.size))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def cdf(self, x: float) -> float:
        """Right-continuous CDF, ``P(X <= x)``."""
        k = np.searchsorted(self.values, x, side="right")
        return float(self.probs[:k].sum())

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def min(self) -> float:
        return float(self.values[0])

    def max(self) -> float:
        return float(self.values[-1])

    def shift_scale(self, shift: float = 0.0, scale: float = 1.0) -> "FiniteDist":
        """Law of ``scale * X + shift`` (scale > 0)."""
        if scale <= 0:
            raise DistributionError("scale must be positive")
        return FiniteDist.from_arrays(scale * self.values + shift, self.probs)

    def sample(self, u: float) -> float:
        """Inverse-CDF draw from a uniform ``u`` in [0, 1)."""
        k = int(np.searchsorted(np.cumsum(self.probs), u, side="right"))
        return float(self.values[min(k, self.values.size - 1)])

    def to_json(self) -> list[dict]:
        return [{"v": v, "p": p} for v, p in self.atoms]

    @classmethod
    def from_json(cls, atoms: list[dict]) -> "FiniteDist":
        try:
            return cls.from_atoms((float(a["v"]), float(a["p"])) for a in atoms)
        except (KeyError, TypeError) as exc:
            raise DistributionError(f"malformed atom list: {exc}") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FiniteDist):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        body = ", ".join(f"({v:.6g}, {p:.6g})" for v, p in self.atoms[:8])
        more = ", ..." if self.values.size > 8 else ""
        return f"FiniteDist([{body}{more}])"


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau <= 1.0:
        raise DistributionError(f"risk level tau={tau} outside (0, 1]")
    return tau


def quantile(dist: FiniteDist, t: float) -> float:
    """Smallest atom ``v`` with ``F(v) >= t`` (infimum convention, no interpolation)."""
    if not 0.0 < t < 1.0:
        raise DistributionError(f"quantile level t={t} outside (0, 1)")
    cum = np.cumsum(dist.probs)
    k = int(np.searchsorted(cum, t, side="left"))
    return float(dist.values[min(k, dist.values.size - 1)])


def cvar_objective(dist: FiniteDist, tau: float, b: float) -> float:
    """``b - E[(b - X)^+] / tau``; CVaR is its supremum over b."""
    return float(b - np.maximum(b - dist.values, 0.0) @ dist.probs / tau)


def cvar_exact(dist: FiniteDist, tau: float) -> float:
    """CVaR of a finite law, evaluated at the tau-quantile (a maximizer of the objective)."""
    tau = _check_tau(tau)
    b = dist.max() if tau == 1.0 else quantile(dist, tau)
    return cvar_objective(dist, tau, b)


def cvar_from_pmf(values: np.ndarray, probs: np.ndarray, tau: float) -> float:
    """:func:`cvar_exact` on raw arrays (sorted values, may contain zero masses)."""
    cum = np.cumsum(probs)
    if tau >= 1.0:
        nz = np.flatnonzero(probs > 0)
        b = values[nz[-1]]
    else:
        k = int(np.searchsorted(cum, tau, side="left"))
        b = values[min(k, values.size - 1)]
    return float(b - np.maximum(b - values, 0.0) @ probs / tau)


def acerbi_cvar(dist: FiniteDist, tau: float) -> float:
    """``tau^-1 * integral_0^tau F^dagger(y) dy`` for a non-negative law.

    The quantile function is piecewise constant on ``[F(v_{i-1}), F(v_i))``,
    so the integral is a finite sum of value times overlap length.
    """
    tau = _check_tau(tau)
    if dist.min() < 0.0:
        raise DistributionError("integral formula requires non-negative atoms")
    upper = np.minimum(np.cumsum(dist.probs), tau)
    lower = np.concatenate(([0.0], upper[:-1]))
    if tau == 1.0:
        upper[-1] = 1.0
    return float(dist.values @ np.maximum(upper - lower, 0.0) / tau)


def empirical_cvar(samples: Sequence[float], tau: float) -> float:
    """Plug-in CVaR of samples via increasing order statistics."""
    tau = _check_tau(tau)
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise DistributionError("empty sample set")
    n_tau = n * tau
    # The formula is continuous across integer n*tau, so rounding noise in ceil is harmless.
    k = min(max(math.ceil(n_tau), 1), n)
    return float((1.0 - k / n_tau) * x[k - 1] + x[:k].sum() / n_tau)


class Radius(NamedTuple):
    value: float
    valid: bool


def cvar_concentration_radius(n: int, tau: float, delta: float) -> Radius:
    """Deviation bound for the empirical CVaR of ``n`` i.i.d. draws in [0, 1].

    ``valid`` is False when ``n < 25 log(2/delta)``; the radius is then vacuous.
    """
    tau = _check_tau(tau)
    if not 0.0 < delta < 1.0:
        raise DistributionError(f"delta={delta} outside (0, 1)")
    if n < 1:
        raise DistributionError("n must be positive")
    log_term = math.log(2.0 / delta)
    n_tau = n * tau
    value = math.sqrt(3.0 * log_term / n_tau) + 15.0 * log_term / n_tau
    return Radius(value, n >= 25.0 * log_term)


def kl_bernoulli(p: float, q: float) -> float:
    """KL(Ber(p) || Ber(q)), with ``0 log 0 = 0`` and ``+inf`` on support mismatch."""
    for x in (p, q):
        if not 0.0 <= x <= 1.0:
            raise DistributionError(f"Bernoulli parameter {x} outside [0, 1]")
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a == 0.0:
            continue
        if b == 0.0:
            return math.inf
        total += a * math.log(a / b)
    return max(total, 0.0)
