"""Independent reference computations used by the tests.

Each oracle is written from the mathematical definition, deliberately
avoiding the library's own code paths.
"""

from __future__ import annotations

import itertools

import numpy as np


def lasso_value(D, x, a, lam) -> float:
    r = x - D @ a
    return float(r @ r + lam * np.abs(a).sum())


def lasso_sign_oracle(D, x, lam):
    """Exact minimizer of ||x - Da||^2 + lam ||a||_1 by sign-pattern enumeration.

    For each pattern s in {-1, 0, 1}^K with linearly independent active
    columns, the stationarity condition ``2 D_S^T (D_S a_S - x) + lam s_S = 0``
    fixes ``a_S``; candidates whose signs agree with ``s`` are feasible and
    the best feasible one is the global minimum.
    """
    D = np.asarray(D, float)
    x = np.asarray(x, float)
    K = D.shape[1]
    best_a = np.zeros(K)
    best = lasso_value(D, x, best_a, lam)
    for s in itertools.product((-1, 0, 1), repeat=K):
        s = np.array(s, float)
        S = np.flatnonzero(s)
        if S.size == 0:
            continue
        DS = D[:, S]
        G = DS.T @ DS
        if np.linalg.matrix_rank(G) < S.size:
            continue
        aS = np.linalg.solve(G, DS.T @ x - 0.5 * lam * s[S])
        if np.any(aS * s[S] < 0):
            continue
        a = np.zeros(K)
        a[S] = aS
        v = lasso_value(D, x, a, lam)
        if v < best:
            best, best_a = v, a
    return best_a, best


def lasso_grid_oracle(D, x, lam, radius=3.0, n=601):
    """Brute-force grid minimum for a two-atom problem."""
    g = np.linspace(-radius, radius, n)
    A1, A2 = np.meshgrid(g, g, indexing="ij")
    R = x[:, None, None] - D[:, [0]][:, :, None] * A1[None] - D[:, [1]][:, :, None] * A2[None]
    vals = np.sum(R * R, axis=0) + lam * (np.abs(A1) + np.abs(A2))
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    return np.array([g[i], g[j]]), float(vals[i, j])


def scatter_loops(A, labels):
    """S_W and S_B by explicit summation over samples and classes."""
    A = np.asarray(A, float)
    K, N = A.shape
    classes = sorted(set(int(v) for v in labels))
    m = np.zeros(K)
    for n in range(N):
        m += A[:, n]
    m /= N
    Sw = np.zeros((K, K))
    Sb = np.zeros((K, K))
    for c in classes:
        members = [n for n in range(N) if labels[n] == c]
        mc = np.zeros(K)
        for n in members:
            mc += A[:, n]
        mc /= len(members)
        for n in members:
            dv = A[:, n] - mc
            for p in range(K):
                for q in range(K):
                    Sw[p, q] += dv[p] * dv[q]
        dm = mc - m
        for p in range(K):
            for q in range(K):
                Sb[p, q] += dm[p] * dm[q]
    return Sw, Sb


def fidelity_terms(X_c, atoms, atom_class, A_c, c) -> float:
    """The three-term class fidelity evaluated term by term."""
    total = 0.0
    full = X_c - atoms @ A_c
    total += float(np.sum(full**2))
    own = [k for k in range(atoms.shape[1]) if atom_class[k] == c]
    total += float(np.sum((X_c - atoms[:, own] @ A_c[own]) ** 2))
    for j in sorted(set(atom_class)):
        if j == c:
            continue
        blk = [k for k in range(atoms.shape[1]) if atom_class[k] == j]
        total += float(np.sum((atoms[:, blk] @ A_c[blk]) ** 2))
    return total


def central_diff(f, X, h=1e-6) -> np.ndarray:
    X = np.asarray(X, float)
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp = X.copy()
        Xm = X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (f(Xp) - f(Xm)) / (2 * h)
    return G


def rel_err(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-12))


def max_cross_coherence(atoms, atom_class) -> float:
    best = 0.0
    K = atoms.shape[1]
    for k in range(K):
        for l in range(K):
            if atom_class[k] != atom_class[l]:
                best = max(best, abs(float(atoms[:, k] @ atoms[:, l])))
    return best
