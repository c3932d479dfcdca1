"""NumPy implementations of the grid kernels, used when the compiled core is unavailable."""

from __future__ import annotations

import numpy as np

TIE_TOL = 1e-12


def shift_operators(dense: np.ndarray) -> np.ndarray:
    """``T[h, s, a, i, c] = P(r = i - c)``: maps a budget profile to ``E_r[V(b - r)]``."""
    G = dense.shape[-1]
    i = np.arange(G)
    diff = i[:, None] - i[None, :]
    T = np.where(diff >= 0, dense[..., np.clip(diff, 0, G - 1)], 0.0)
    return np.ascontiguousarray(T)


def plan(P, N, T, n, L, mode):
    H, S, A, _ = P.shape
    G = n + 1
    lo = np.zeros((H + 1, S, G))
    hi = np.zeros((H + 1, S, G))
    pol = np.zeros((H, S, G), dtype=np.int64)
    bon_out = np.zeros((H, S, G))
    lo[H] = hi[H] = np.arange(G) / n
    s_idx = np.arange(S)[:, None]
    g_idx = np.arange(G)[None, :]
    for h in range(H - 1, -1, -1):
        Ph = P[h]
        ev = np.einsum("saic,tc->sati", T[h], lo[h + 1])
        mean = np.einsum("sat,sati->sai", Ph, ev)
        if mode == 0:
            bon = np.zeros_like(mean)
        elif mode == 1:
            bon = np.broadcast_to(np.minimum(np.sqrt(L / N[h]), 1.0)[..., None], mean.shape)
        else:
            var = np.einsum("sat,sati->sai", Ph, (ev - mean[:, :, None, :]) ** 2)
            gap = (hi[h + 1] - lo[h + 1]) ** 2
            width = np.einsum("sat,sati->sai", Ph, np.einsum("saic,tc->sati", T[h], gap))
            Nh = N[h][..., None]
            bon = np.minimum(np.sqrt(2.0 * var * L / Nh) + np.sqrt(2.0 * width * L / Nh) + L / Nh, 1.0)
        U = mean - bon
        u_min = U.min(axis=1, keepdims=True)
        best = np.argmax(U <= u_min + TIE_TOL, axis=1)
        pol[h] = best
        lo[h] = np.maximum(U[s_idx, best, g_idx], 0.0)
        bon_out[h] = bon[s_idx, best, g_idx]
        if mode == 2:
            ev_hi = np.einsum("saic,tc->sati", T[h], hi[h + 1])
            mean_hi = np.einsum("sat,sati->sai", Ph, ev_hi)
            hi[h] = np.minimum(mean_hi[s_idx, best, g_idx] + bon_out[h], 1.0)
    return lo, hi, pol, bon_out


def occupancy(P, ridx, rprob, rlen, pol, s1, b0, n):
    H, S, _, _ = P.shape
    G = n + 1
    occ = np.zeros((H + 1, S, G))
    occ[0, s1, 0] = 1.0
    z = np.arange(G)
    bidx = np.maximum(b0 - z, 0)
    for h in range(H):
        for s in range(S):
            row = occ[h, s]
            if not row.any():
                continue
            acts = pol[h, s, bidx]
            for a in np.unique(acts[row > 0]):
                mass = np.where(acts == a, row, 0.0)
                for j in range(rlen[h, s, a]):
                    r = int(ridx[h, s, a, j])
                    rp = rprob[h, s, a, j]
                    if rp == 0.0:
                        continue
                    if r > 0 and mass[G - r:].any():
                        return None
                    shifted = mass[: G - r] * rp
                    occ[h + 1, :, r:] += np.outer(P[h, s, a], shifted)
    return occ
