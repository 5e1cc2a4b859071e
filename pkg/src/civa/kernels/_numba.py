"""Loop-level sweep kernels compiled with numba."""
import functools

import numba as nb
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

njit = functools.partial(nb.njit, cache=True, nogil=True)


@njit
def _chol_solve_unit(A, k, out):
    """Solve ``A x = e_k`` by Cholesky; returns False if ``A`` is not PD."""
    K = A.shape[0]
    L = np.zeros((K, K))
    for j in range(K):
        s = A[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, K):
            t = A[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / L[j, j]
    # forward: L z = e_k  (z[i] = 0 for i < k)
    z = np.zeros(K)
    for i in range(k, K):
        t = 1.0 if i == k else 0.0
        for p in range(k, i):
            t -= L[i, p] * z[p]
        z[i] = t / L[i, i]
    # back: L^T x = z
    for i in range(K - 1, -1, -1):
        t = z[i]
        for p in range(i + 1, K):
            t -= L[p, i] * out[p]
        out[i] = t / L[i, i]
    return True


@njit
def inv_column(S, k, ridge_rel, out):
    """Column ``k`` of ``S^-1``; loads the diagonal only if Cholesky fails.

    Returns 0 (clean), 1 (ridge used) or -1 (still singular).
    """
    if _chol_solve_unit(S, k, out):
        return 0
    K = S.shape[0]
    tr = 0.0
    for i in range(K):
        tr += S[i, i]
    ridge = ridge_rel * tr / K
    Sr = S.copy()
    for i in range(K):
        Sr[i, i] += ridge
    if _chol_solve_unit(Sr, k, out):
        return 1
    return -1


@njit
def select_argmin(grid, e):
    for i in range(grid.shape[0]):
        if grid[i] > e:
            return grid[i]
    return grid[grid.shape[0] - 1]


@njit
def select_argmax(grid, e):
    for i in range(grid.shape[0] - 1, -1, -1):
        if grid[i] <= e:
            return grid[i]
    return grid[0]


@njit
def select_pt(grid, eps):
    best = grid[0]
    best_dist = np.inf
    for i in range(grid.shape[0]):
        d = np.inf
        for k in range(eps.shape[0]):
            t = abs(grid[i] - eps[k])
            if t < d:
                d = t
        if d < best_dist:
            best_dist = d
            best = grid[i]
    return best


@njit
def _quad(R, w):
    Rw = R @ w
    return Rw, np.dot(w, Rw)


@njit
def sweep(W, S, R, B, rr, variant, eta, gamma, mu_max, lam, mu, rho, scheme, grid, ridge_rel):
    """One full n-outer / k-inner pass, updating ``W``, ``S``, ``mu``, ``rho``
    and ``scheme`` in place.

    Returns ``(status, n_ridge, n_switch)``.
    """
    K = W.shape[0]
    N = W.shape[1]
    M = B.shape[1]
    col = np.empty(K)
    eps_k = np.empty(K)
    g = np.empty(N)
    n_ridge = 0
    n_switch = 0
    lagrangian = variant == FIXED or variant == PT or variant == AR
    for n in range(N):
        if variant == PT and n < M:
            for k in range(K):
                w = W[k, n]
                Rw, q = _quad(R[k, k], w)
                eps_k[k] = abs(np.dot(w, B[k, n])) / np.sqrt(rr[n] * q)
            r_shared = select_pt(grid, eps_k)
            for k in range(K):
                rho[n, k] = r_shared
        e_n = np.zeros(N)
        e_n[n] = 1.0
        for k in range(K):
            flag = inv_column(S[n], k, ridge_rel, col)
            if flag < 0:
                return STATUS_ILL_CONDITIONED, n_ridge, n_switch
            n_ridge += flag
            w = W[k, n].copy()
            g[:] = 0.0
            for l in range(K):
                g += col[l] * (R[k, l] @ W[l, n])
            d = np.linalg.solve(W[k], e_n)
            g -= d / np.dot(d, w)

            if n < M and lagrangian:
                Rw, q = _quad(R[k, k], w)
                c = np.dot(w, B[k, n])
                e = abs(c) / np.sqrt(rr[n] * q)
                alpha = mu[n, k] + gamma * (rho[n, k] - e)
                mu[n, k] = max(0.0, alpha)
                if variant == AR:
                    if mu[n, k] >= mu_max:
                        if scheme[n, k] != ARGMAX:
                            n_switch += 1
                        scheme[n, k] = ARGMAX
                    elif mu[n, k] <= 0.0:
                        if scheme[n, k] != ARGMIN:
                            n_switch += 1
                        scheme[n, k] = ARGMIN
                    if scheme[n, k] == ARGMIN:
                        rho[n, k] = select_argmin(grid, e)
                    else:
                        rho[n, k] = select_argmax(grid, e)
                coef = max(0.0, mu[n, k] + gamma * (rho[n, k] - e))
                if coef > 0.0:
                    scale = np.sign(c) / np.sqrt(rr[n] * q)
                    g -= coef * scale * (B[k, n] - (c / q) * Rw)
            elif n < M and variant == TF:
                Rw, q = _quad(R[k, k], w)
                for m in range(M):
                    c = np.dot(w, B[k, m])
                    root = np.sqrt(rr[m] * q)
                    e = abs(c) / root
                    de = (np.sign(c) / root) * (B[k, m] - (c / q) * Rw)
                    if m == n:
                        g -= lam * e * de
                    else:
                        g += lam * e * de

            # tangent projection, normalized step, back onto the sphere
            gt = g - np.dot(w, g) * w
            nrm = np.sqrt(np.dot(gt, gt))
            if not np.isfinite(nrm):
                return STATUS_NONFINITE, n_ridge, n_switch
            if nrm >= STEP_FLOOR:
                w = w - (eta / nrm) * gt
                w = w / np.sqrt(np.dot(w, w))
                W[k, n] = w
            for l in range(K):
                v = np.dot(w, R[k, l] @ W[l, n])
                S[n, k, l] = v
                S[n, l, k] = v
    return OK, n_ridge, n_switch
