# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backward-induction and occupancy kernels on the budget grid."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double TIE_TOL = 1e-12


def plan(const double[:, :, :, ::1] P,
         const double[:, :, ::1] N,
         const cnp.int64_t[:, :, :, ::1] ridx,
         const double[:, :, :, ::1] rprob,
         const cnp.int64_t[:, :, ::1] rlen,
         int n, double L, int mode):
    """Backward induction over (h, s, b); mode 0 = exact, 1 = Hoeffding, 2 = Bernstein.

    Returns ``(lo, hi, policy, bonus)``; ``hi`` is only filled for mode 2.
    """
    cdef Py_ssize_t H = P.shape[0], S = P.shape[1], A = P.shape[2], G = n + 1
    cdef Py_ssize_t h, s, a, t, i, j, k, best_a
    cdef double p, rp, w, whi, whi_sum, d, diff, mean, var, width, bon, u_min
    lo_arr = np.zeros((H + 1, S, G))
    hi_arr = np.zeros((H + 1, S, G))
    pol_arr = np.zeros((H, S, G), dtype=np.int64)
    bon_arr = np.zeros((H, S, G))
    cdef double[:, :, ::1] lo = lo_arr
    cdef double[:, :, ::1] hi = hi_arr
    cdef cnp.int64_t[:, :, ::1] pol = pol_arr
    cdef double[:, :, ::1] bout = bon_arr
    cdef double[::1] W = np.zeros(S)
    cdef double[::1] U = np.zeros(A)
    cdef double[::1] BON = np.zeros(A)
    cdef double[::1] MHI = np.zeros(A)

    for s in range(S):
        for i in range(G):
            lo[H, s, i] = i / <double> n
            hi[H, s, i] = i / <double> n

    for h in range(H - 1, -1, -1):
        for s in range(S):
            for i in range(G):
                for a in range(A):
                    mean = 0.0
                    width = 0.0
                    whi_sum = 0.0
                    for t in range(S):
                        p = P[h, s, a, t]
                        W[t] = 0.0
                        if p == 0.0:
                            continue
                        w = 0.0
                        whi = 0.0
                        d = 0.0
                        for j in range(rlen[h, s, a]):
                            k = i - ridx[h, s, a, j]
                            if k < 0:
                                continue
                            rp = rprob[h, s, a, j]
                            w += rp * lo[h + 1, t, k]
                            if mode == 2:
                                whi += rp * hi[h + 1, t, k]
                                diff = hi[h + 1, t, k] - lo[h + 1, t, k]
                                d += rp * diff * diff
                        W[t] = w
                        mean += p * w
                        if mode == 2:
                            whi_sum += p * whi
                            width += p * d
                    if mode == 0:
                        bon = 0.0
                    elif mode == 1:
                        bon = sqrt(L / N[h, s, a])
                        if bon > 1.0:
                            bon = 1.0
                    else:
                        var = 0.0
                        for t in range(S):
                            p = P[h, s, a, t]
                            if p != 0.0:
                                var += p * (W[t] - mean) * (W[t] - mean)
                        bon = sqrt(2.0 * var * L / N[h, s, a]) + sqrt(2.0 * width * L / N[h, s, a]) + L / N[h, s, a]
                        if bon > 1.0:
                            bon = 1.0
                    U[a] = mean - bon
                    BON[a] = bon
                    MHI[a] = whi_sum
                u_min = INFINITY
                for a in range(A):
                    if U[a] < u_min:
                        u_min = U[a]
                best_a = 0
                for a in range(A):
                    if U[a] <= u_min + TIE_TOL:
                        best_a = a
                        break
                pol[h, s, i] = best_a
                bout[h, s, i] = BON[best_a]
                lo[h, s, i] = U[best_a] if U[best_a] > 0.0 else 0.0
                if mode == 2:
                    w = MHI[best_a] + BON[best_a]
                    hi[h, s, i] = w if w < 1.0 else 1.0
    return lo_arr, hi_arr, pol_arr, bon_arr


def occupancy(const double[:, :, :, ::1] P,
              const cnp.int64_t[:, :, :, ::1] ridx,
              const double[:, :, :, ::1] rprob,
              const cnp.int64_t[:, :, ::1] rlen,
              const cnp.int64_t[:, :, ::1] pol,
              int s1, int b0, int n):
    """Joint law of (state, collected reward index) at each step when rolling in ``pol`` from ``b0``.

    ``occ[h, s, z]``: probability of being in ``s`` at step ``h`` having collected
    ``z / n`` so far (so the budget is ``(b0 - z) / n``).  Returns ``None`` if a
    path collects more than 1.
    """
    cdef Py_ssize_t H = P.shape[0], S = P.shape[1], G = n + 1
    cdef Py_ssize_t h, s, t, z, j, a, bi, k
    cdef double m, rp, p
    occ_arr = np.zeros((H + 1, S, G))
    cdef double[:, :, ::1] occ = occ_arr
    occ[0, s1, 0] = 1.0
    for h in range(H):
        for s in range(S):
            for z in range(G):
                m = occ[h, s, z]
                if m == 0.0:
                    continue
                bi = b0 - z
                if bi < 0:
                    bi = 0
                a = pol[h, s, bi]
                for j in range(rlen[h, s, a]):
                    k = z + ridx[h, s, a, j]
                    rp = rprob[h, s, a, j]
                    if rp == 0.0:
                        continue
                    if k >= G:
                        return None
                    for t in range(S):
                        p = P[h, s, a, t]
                        if p != 0.0:
                            occ[h + 1, t, k] += m * rp * p
    return occ_arr
