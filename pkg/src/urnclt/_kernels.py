"""Compiled inner loops (numba)."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

RENORM_MASK = (1 << 20) - 1


@njit(nogil=True, cache=True)
def draw_color(W, t, u):
    """Smallest ``c`` with ``sum_{i<=c} W_i > u t``; falls back to the last positive weight."""
    target = u * t
    acc = 0.0
    K = W.shape[0]
    for c in range(K):
        acc += W[c]
        if acc > target:
            return c
    c = K - 1
    while c > 0 and W[c] <= 0.0:
        c -= 1
    return c


@njit(nogil=True, cache=True)
def advance_path(W, n, w0, R, u, checkpoints, out, k):
    """Run ``len(u)`` urn steps in place.

    ``W`` is updated in place; whenever the step counter reaches
    ``checkpoints[k]`` the state is copied to ``out[k]``.  Returns the new
    step counter and checkpoint cursor.
    """
    K = W.shape[0]
    ncp = checkpoints.shape[0]
    for s in range(u.shape[0]):
        c = draw_color(W, n + w0, u[s])
        for j in range(K):
            W[j] += R[c, j]
        n += 1
        if (n & RENORM_MASK) == 0:
            tot = 0.0
            for j in range(K):
                tot += W[j]
            scale = (n + w0) / tot
            for j in range(K):
                W[j] *= scale
        while k < ncp and checkpoints[k] == n:
            for j in range(K):
                out[k, j] = W[j]
            k += 1
    return n, k


@njit(cache=True)
def joint_moments(R, Xi, G, W0, w0, horizon, record, out_m, out_u, out_S):
    """Exact first and second moments of ``u_n = Xi' W_n``.

    ``R Xi = Xi G`` must hold.  With ``t = n + w0`` and ``m_n = E W_n``::

        m_{n+1} = m_n + R' m_n / t
        E u_{n+1} = (I + G'/t) E u_n
        S_{n+1} = S_n + (G' S_n + S_n G + G' Xi' diag(m_n) Xi G) / t

    where ``S_n = E u_n u_n'``.  Values at the (sorted) steps in ``record``
    are written to the output arrays.
    """
    K = R.shape[0]
    p = Xi.shape[1]
    m = W0.copy()
    u = np.zeros(p)
    S = np.zeros((p, p))
    D = np.zeros((p, p))
    GS = np.zeros((p, p))
    GDG = np.zeros((p, p))
    tmp = np.zeros((p, p))
    mnew = np.zeros(K)
    unew = np.zeros(p)
    for a in range(p):
        acc = 0.0
        for c in range(K):
            acc += Xi[c, a] * W0[c]
        u[a] = acc
    for a in range(p):
        for b in range(p):
            S[a, b] = u[a] * u[b]
    k = 0
    nrec = record.shape[0]
    while k < nrec and record[k] == 0:
        out_m[k] = m
        out_u[k] = u
        out_S[k] = S
        k += 1
    for n in range(horizon):
        if k >= nrec:
            break
        t = n + w0
        for a in range(p):
            for b in range(a, p):
                acc = 0.0
                for c in range(K):
                    acc += Xi[c, a] * m[c] * Xi[c, b]
                D[a, b] = acc
                D[b, a] = acc
        # G' S and G' D G
        for a in range(p):
            for b in range(p):
                acc = 0.0
                acc2 = 0.0
                for c in range(p):
                    acc += G[c, a] * S[c, b]
                    acc2 += G[c, a] * D[c, b]
                GS[a, b] = acc
                tmp[a, b] = acc2
        for a in range(p):
            for b in range(p):
                acc = 0.0
                for c in range(p):
                    acc += tmp[a, c] * G[c, b]
                GDG[a, b] = acc
        for a in range(p):
            for b in range(a, p):
                v = S[a, b] + (GS[a, b] + GS[b, a] + 0.5 * (GDG[a, b] + GDG[b, a])) / t
                S[a, b] = v
                S[b, a] = v
        for a in range(p):
            acc = 0.0
            for c in range(p):
                acc += G[c, a] * u[c]
            unew[a] = u[a] + acc / t
        for a in range(p):
            u[a] = unew[a]
        for j in range(K):
            acc = 0.0
            for c in range(K):
                acc += R[c, j] * m[c]
            mnew[j] = m[j] + acc / t
        for j in range(K):
            m[j] = mnew[j]
        while k < nrec and record[k] == n + 1:
            out_m[k] = m
            out_u[k] = u
            out_S[k] = S
            k += 1


@njit(cache=True)
def normalized_cross(R, xi_a, xi_b, lam_a, lam_b, W0, w0, horizon, record, out, tail_from):
    """Second moment ``E U_n V_n`` of two normalized scalar martingales.

    ``U_n = W_n' xi_a / a_n`` with ``a_{n+1} = a_n (1 + lam_a/t)``,
    ``t = n + w0``, and likewise ``V_n``.  With ``f = lam/t``::

        E U_{n+1} V_{n+1} = E U_n V_n (1 - f_a f_b / ((1 + f_a)(1 + f_b)))
                            + lam_a lam_b <m_n / t, xi_a xi_b> / (a_{n+1} b_{n+1})

    using the exact mean ``m_n = E W_n``.  Values at ``record`` steps go to
    ``out``.  Returns ``max |increment| * (n + w0)^(lam_a + lam_b)`` over
    steps ``n >= tail_from``.
    """
    K = R.shape[0]
    m = W0.copy()
    mnew = np.zeros(K)
    ua = 0.0
    ub = 0.0
    for c in range(K):
        ua += W0[c] * xi_a[c]
        ub += W0[c] * xi_b[c]
    T = ua * ub
    aa = 1.0
    ab = 1.0
    s = lam_a + lam_b
    peak = 0.0
    k = 0
    nrec = record.shape[0]
    while k < nrec and record[k] == 0:
        out[k] = T
        k += 1
    for n in range(horizon):
        t = n + w0
        q = 0.0
        for c in range(K):
            q += m[c] * xi_a[c] * xi_b[c]
        q /= t
        fa = lam_a / t
        fb = lam_b / t
        aa *= 1.0 + fa
        ab *= 1.0 + fb
        Tn = T * (1.0 - fa * fb / ((1.0 + fa) * (1.0 + fb))) + lam_a * lam_b * q / (aa * ab)
        if n + 1 >= tail_from:
            g = abs(Tn - T) * (t + 1.0) ** s
            if g > peak:
                peak = g
        T = Tn
        for j in range(K):
            acc = 0.0
            for c in range(K):
                acc += R[c, j] * m[c]
            mnew[j] = m[j] + acc / t
        for j in range(K):
            m[j] = mnew[j]
        while k < nrec and record[k] == n + 1:
            out[k] = T
            k += 1
    return peak


@njit(cache=True)
def critical_product_sum(n, n0, d, lam_c):
    """Truncated product-sum behind the critical covariance coefficient.

    Normalized critical dynamics multiply by
    ``P_i = (1 - (2d-1)/(2 i log i)) I + (lam_c/i) C + F/i``.  With
    ``Q = e_0 e_0'`` the top nilpotent coefficient of
    ``prod_{i=j+1}^{n} P_i`` is accumulated, weighted by
    ``1/((j+1) log^{2d-1}(j+1))``, for ``j = n0..n``.  Returns the (0,0) and
    (1,1) entries of the weighted sum of ``X' Q X`` where ``X`` is that
    coefficient as a real ``1x1`` (``lam_c = 0``) or ``2x2`` matrix.
    """
    cr = np.zeros(d)
    ci = np.zeros(d)
    cr[0] = 1.0
    t00 = 0.0
    t11 = 0.0
    for j in range(n, n0 - 1, -1):
        w = 1.0 / ((j + 1) * math.log(j + 1) ** (2 * d - 1))
        a = cr[d - 1]
        b = ci[d - 1]
        t00 += w * a * a
        t11 += w * b * b
        i = j
        if i >= 2:
            s = 1.0 - (2 * d - 1) / (2.0 * i * math.log(i))
            r = lam_c / i
            for kk in range(d - 1, 0, -1):
                nr = cr[kk] * s - ci[kk] * r + cr[kk - 1] / i
                ni = cr[kk] * r + ci[kk] * s + ci[kk - 1] / i
                cr[kk] = nr
                ci[kk] = ni
            nr = cr[0] * s - ci[0] * r
            ni = cr[0] * r + ci[0] * s
            cr[0] = nr
            ci[0] = ni
    return t00, t11
