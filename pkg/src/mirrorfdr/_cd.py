"""Compiled coordinate-descent kernels for l1-penalized least squares.

Two flavours are provided. ``cd_gram`` works on a precomputed Gram matrix
``G = X'X/n`` and ``c = X'y/n`` and minimizes

    0.5 b'Gb - c'b + sum_j lam_j |b_j|

over the coordinates flagged in ``free`` (the rest stay at their start
value). ``cd_weighted`` keeps a residual and minimizes

    (1/2n) sum_i w_i (z_i - x_i'b)^2 + lam ||b||_1

which is the inner problem of the proximal Newton loop.

Both alternate a full sweep with sweeps restricted to the active set and
stop once a full sweep moves no coordinate by more than ``tol``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def cd_gram(G, c, lam, beta, free, tol, max_sweeps):
    p = G.shape[0]
    g = c.copy()
    for k in range(p):
        bk = beta[k]
        if bk != 0.0:
            for i in range(p):
                g[i] -= G[k, i] * bk
    active = np.zeros(p, dtype=np.bool_)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(p):
            if not free[j]:
                continue
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            new = _soft(g[j] + gjj * old, lam[j]) / gjj
            d = new - old
            if d != 0.0:
                for i in range(p):
                    g[i] -= G[j, i] * d
                beta[j] = new
                if abs(d) > dmax:
                    dmax = abs(d)
            if new != 0.0:
                active[j] = True
        sweeps += 1
        if dmax <= tol:
            converged = True
            break
        while sweeps < max_sweeps:
            dmax = 0.0
            for j in range(p):
                if not active[j]:
                    continue
                gjj = G[j, j]
                old = beta[j]
                new = _soft(g[j] + gjj * old, lam[j]) / gjj
                d = new - old
                if d != 0.0:
                    for i in range(p):
                        g[i] -= G[j, i] * d
                    beta[j] = new
                    if abs(d) > dmax:
                        dmax = abs(d)
            sweeps += 1
            if dmax <= tol:
                break
    return beta, sweeps, converged


@njit(cache=True)
def nodewise_gram(G, lam, tol, max_sweeps):
    """Regress every column on all others; row j of the result is gamma_j
    embedded in R^p with a zero at position j."""
    p = G.shape[0]
    gamma = np.zeros((p, p))
    sweeps = np.zeros(p, dtype=np.int64)
    conv = np.zeros(p, dtype=np.bool_)
    free = np.ones(p, dtype=np.bool_)
    lamv = np.empty(p)
    for j in range(p):
        free[j] = False
        lamv[:] = lam[j]
        b = np.zeros(p)
        c = G[:, j].copy()
        b, s, cv = cd_gram(G, c, lamv, b, free, tol, max_sweeps)
        gamma[j, :] = b
        gamma[j, j] = 0.0
        sweeps[j] = s
        conv[j] = cv
        free[j] = True
    return gamma, sweeps, conv


@njit(cache=True)
def cd_weighted(XT, w, z, lam, beta, tol, max_sweeps):
    p, n = XT.shape
    r = z.copy()
    for k in range(p):
        bk = beta[k]
        if bk != 0.0:
            for i in range(n):
                r[i] -= XT[k, i] * bk
    a = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * XT[j, i] * XT[j, i]
        a[j] = s / n
    active = np.zeros(p, dtype=np.bool_)
    sweeps = 0
    converged = False
    only_active = False
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(p):
            if only_active and not active[j]:
                continue
            aj = a[j]
            if aj <= 0.0:
                continue
            s = 0.0
            for i in range(n):
                s += w[i] * XT[j, i] * r[i]
            old = beta[j]
            new = _soft(s / n + aj * old, lam) / aj
            d = new - old
            if d != 0.0:
                for i in range(n):
                    r[i] -= XT[j, i] * d
                beta[j] = new
                if abs(d) > dmax:
                    dmax = abs(d)
            if new != 0.0:
                active[j] = True
        sweeps += 1
        if dmax <= tol:
            if not only_active:
                converged = True
                break
            only_active = False
        else:
            only_active = True
    return beta, sweeps, converged
