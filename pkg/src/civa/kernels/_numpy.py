"""Vectorized numpy version of the sweep kernels.

Same update order as the compiled loops; used when numba is disabled or
missing, and as a cross-check in the test-suite.
"""
import numpy as np

from ._codes import (
    ARGMAX,
    ARGMIN,
    FIXED,
    OK,
    PT,
    AR,
    TF,
    STATUS_ILL_CONDITIONED,
    STATUS_NONFINITE,
    STEP_FLOOR,
)


def inv_column(S, k, ridge_rel, out):
    K = S.shape[0]
    e = np.zeros(K)
    e[k] = 1.0
    try:
        L = np.linalg.cholesky(S)
        flag = 0
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(S + ridge_rel * np.trace(S) / K * np.eye(K))
            flag = 1
        except np.linalg.LinAlgError:
            return -1
    z = np.linalg.solve(L, e)
    out[:] = np.linalg.solve(L.T, z)
    return flag


def select_argmin(grid, e):
    idx = np.searchsorted(grid, e, side="right")
    return grid[min(idx, grid.size - 1)]


def select_argmax(grid, e):
    idx = np.searchsorted(grid, e, side="right") - 1
    return grid[max(idx, 0)]


def select_pt(grid, eps):
    dist = np.abs(grid[:, None] - np.asarray(eps)[None, :]).min(axis=1)
    # argmin returns the first (smallest) candidate on ties
    return grid[int(np.argmin(dist))]


def sweep(W, S, R, B, rr, variant, eta, gamma, mu_max, lam, mu, rho, scheme, grid, ridge_rel):
    K, N, _ = W.shape
    M = B.shape[1]
    col = np.empty(K)
    n_ridge = 0
    n_switch = 0
    lagrangian = variant in (FIXED, PT, AR)
    for n in range(N):
        if variant == PT and n < M:
            Wn = W[:, n, :]
            Rkk = R[np.arange(K), np.arange(K)]
            q = np.einsum("ki,kij,kj->k", Wn, Rkk, Wn)
            eps = np.abs(np.einsum("ki,ki->k", Wn, B[:, n, :])) / np.sqrt(rr[n] * q)
            rho[n, :] = select_pt(grid, eps)
        e_n = np.zeros(N)
        e_n[n] = 1.0
        for k in range(K):
            flag = inv_column(S[n], k, ridge_rel, col)
            if flag < 0:
                return STATUS_ILL_CONDITIONED, n_ridge, n_switch
            n_ridge += flag
            w = W[k, n].copy()
            g = np.einsum("lij,lj,l->i", R[k], W[:, n, :], col)
            d = np.linalg.solve(W[k], e_n)
            g -= d / (d @ w)

            if n < M and lagrangian:
                Rw = R[k, k] @ w
                q = w @ Rw
                c = w @ B[k, n]
                e = abs(c) / np.sqrt(rr[n] * q)
                mu[n, k] = max(0.0, mu[n, k] + gamma * (rho[n, k] - e))
                if variant == AR:
                    new = scheme[n, k]
                    if mu[n, k] >= mu_max:
                        new = ARGMAX
                    elif mu[n, k] <= 0.0:
                        new = ARGMIN
                    n_switch += int(new != scheme[n, k])
                    scheme[n, k] = new
                    pick = select_argmin if new == ARGMIN else select_argmax
                    rho[n, k] = pick(grid, e)
                coef = max(0.0, mu[n, k] + gamma * (rho[n, k] - e))
                if coef > 0.0:
                    g -= coef * np.sign(c) / np.sqrt(rr[n] * q) * (B[k, n] - (c / q) * Rw)
            elif n < M and variant == TF:
                Rw = R[k, k] @ w
                q = w @ Rw
                c = B[k, :M] @ w
                root = np.sqrt(rr * q)
                e = np.abs(c) / root
                de = (np.sign(c) / root)[:, None] * (B[k, :M] - np.outer(c / q, Rw))
                sgn = np.ones(M)
                sgn[n] = -1.0
                g += lam * (sgn * e) @ de

            gt = g - (w @ g) * w
            nrm = np.sqrt(gt @ gt)
            if not np.isfinite(nrm):
                return STATUS_NONFINITE, n_ridge, n_switch
            if nrm >= STEP_FLOOR:
                w = w - (eta / nrm) * gt
                w = w / np.sqrt(w @ w)
                W[k, n] = w
            v = np.einsum("i,lij,lj->l", w, R[k], W[:, n, :])
            S[n, k, :] = v
            S[n, :, k] = v
    return OK, n_ridge, n_switch
