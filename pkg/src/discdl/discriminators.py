"""Discrimination terms and the label-derived matrices they need."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dict_optimize import Dictionary


def _labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=int).reshape(-1)


def build_label_indicator(labels, n_classes: int) -> np.ndarray:
    """One-hot ``C x N`` matrix ``H`` with ``H[c-1, n] = 1`` iff ``labels[n] == c``."""
    y = _labels(labels)
    if y.size and (y.min() < 1 or y.max() > n_classes):
        raise ValueError(f"labels must lie in 1..{n_classes}")
    H = np.zeros((n_classes, y.size))
    H[y - 1, np.arange(y.size)] = 1.0
    return H


def build_consistency_matrix(labels, atom_class) -> np.ndarray:
    """Binary ``K x N`` matrix ``Q``: ``Q[k, n] = 1`` iff atom ``k`` and signal ``n`` share a class."""
    if atom_class is None:
        raise ValueError("the label-consistency term needs an atom-to-class assignment")
    ac = _labels(atom_class)
    y = _labels(labels)
    if (ac.size and ac.min() < 1) or (y.size and y.min() < 1):
        raise ValueError("class ids must be >= 1")
    return (ac[:, None] == y[None, :]).astype(float)


def logistic_loss(margin):
    """``log(1 + exp(-margin))``, stable for large ``|margin|``."""
    out = np.logaddexp(0.0, -np.asarray(margin, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def logistic_slope(margin):
    """Derivative of :func:`logistic_loss`: ``-sigmoid(-margin)``."""
    return -expit(-np.asarray(margin, dtype=float))


def incoherence_penalty(D_i: np.ndarray, D_j: np.ndarray) -> float:
    """``||D_i^T D_j||_F^2``."""
    D_i = D_i.atoms if isinstance(D_i, Dictionary) else np.asarray(D_i, dtype=float)
    D_j = D_j.atoms if isinstance(D_j, Dictionary) else np.asarray(D_j, dtype=float)
    if D_i.shape[0] != D_j.shape[0]:
        raise ValueError("dictionaries must share the row dimension")
    G = D_i.T @ D_j
    return float(np.sum(G * G))


def incoherence_gradient(D_i: np.ndarray, others: Sequence[np.ndarray]) -> np.ndarray:
    """Gradient of ``sum_j ||D_i^T D_j||_F^2`` w.r.t. ``D_i``: ``2 (sum_j D_j D_j^T) D_i``."""
    D_i = np.asarray(D_i, dtype=float)
    M = np.zeros((D_i.shape[0], D_i.shape[0]))
    for D_j in others:
        M += D_j @ D_j.T
    return 2.0 * M @ D_i


def total_incoherence(blocks: Sequence[np.ndarray]) -> float:
    """``sum_{i != j} ||D_i^T D_j||_F^2`` over ordered pairs."""
    total = 0.0
    for i, Di in enumerate(blocks):
        for j, Dj in enumerate(blocks):
            if i != j:
                total += incoherence_penalty(Di, Dj)
    return total


@dataclass
class ScatterPair:
    within: np.ndarray
    between: np.ndarray
    class_means: np.ndarray
    mean: np.ndarray


def _class_columns(y: np.ndarray, n_classes: int | None) -> list[np.ndarray]:
    C = int(y.max()) if n_classes is None else n_classes
    cols = [np.flatnonzero(y == c) for c in range(1, C + 1)]
    for c, idx in enumerate(cols, start=1):
        if idx.size == 0:
            raise ValueError(f"class {c} has no samples")
    return cols


def scatter_matrices(A: np.ndarray, labels, n_classes: int | None = None) -> ScatterPair:
    """Within- and between-class scatter of the code columns.

    The between-class scatter sums the (unweighted) outer products of the
    class-mean deviations from the global mean of all columns.
    """
    A = np.asarray(A, dtype=float)
    y = _labels(labels)
    if y.size != A.shape[1]:
        raise ValueError("one label per code column is required")
    cols = _class_columns(y, n_classes)
    m = A.mean(axis=1)
    means = np.stack([A[:, idx].mean(axis=1) for idx in cols], axis=1)
    dev = A - means[:, y - 1]
    Sw = dev @ dev.T
    md = means - m[:, None]
    Sb = md @ md.T
    return ScatterPair(Sw, Sb, means, m)


def fisher_term(A: np.ndarray, labels, eta: float, n_classes: int | None = None):
    """Value and gradient of ``tr(S_W) - tr(S_B) + eta * ||A||_F^2``.

    Returns
    -------
    value : float
    grad : ndarray, same shape as ``A``
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    A = np.asarray(A, dtype=float)
    y = _labels(labels)
    cols = _class_columns(y, n_classes)
    N = A.shape[1]
    counts = np.array([idx.size for idx in cols], dtype=float)
    m = A.mean(axis=1)
    means = np.stack([A[:, idx].mean(axis=1) for idx in cols], axis=1)
    dev = A - means[:, y - 1]
    md = means - m[:, None]
    value = float(np.sum(dev * dev) - np.sum(md * md) + eta * np.sum(A * A))
    # d tr(S_B) / d a_i = 2 (m_c - m) / N_c - (2 / N) sum_c' (m_c' - m)
    gb = 2.0 * md / counts - (2.0 / N) * md.sum(axis=1, keepdims=True)
    grad = 2.0 * dev - gb[:, y - 1] + 2.0 * eta * A
    return value, grad


def discriminative_fidelity(X_c: np.ndarray, D: Dictionary, A_c: np.ndarray, c: int) -> float:
    """Class-``c`` fidelity: reconstruct well overall and by ``D_c``, poorly by other blocks.

    ``||X_c - D A_c||^2 + ||X_c - D_c A_c^c||^2 + sum_{j != c} ||D_j A_c^j||^2``
    """
    if not isinstance(D, Dictionary) or D.atom_class is None:
        raise ValueError("discriminative fidelity needs a structured dictionary")
    X_c = np.asarray(X_c, dtype=float)
    A_c = np.asarray(A_c, dtype=float)
    own = D.atom_class == c
    R = X_c - D.atoms @ A_c
    Rc = X_c - D.atoms[:, own] @ A_c[own]
    total = np.sum(R * R) + np.sum(Rc * Rc)
    for j in D.class_ids():
        if j == c:
            continue
        blk = D.atom_class == j
        P = D.atoms[:, blk] @ A_c[blk]
        total += np.sum(P * P)
    return float(total)


def discriminative_fidelity_grad(X_c: np.ndarray, D: Dictionary, A_c: np.ndarray, c: int) -> np.ndarray:
    """Gradient of :func:`discriminative_fidelity` w.r.t. ``A_c``."""
    own = D.atom_class == c
    Da = D.atoms
    G = -2.0 * Da.T @ (X_c - Da @ A_c)
    G[own] -= 2.0 * Da[:, own].T @ (X_c - Da[:, own] @ A_c[own])
    for j in D.class_ids():
        if j == c:
            continue
        blk = D.atom_class == j
        Dj = Da[:, blk]
        G[blk] += 2.0 * Dj.T @ (Dj @ A_c[blk])
    return G


def coherence_report(D: Dictionary, tau: float = 0.95) -> dict:
    """Cross-class absolute atom inner products for every ordered class pair."""
    if D.atom_class is None:
        raise ValueError(
            "coherence inspection needs per-class dictionaries or an atom-to-class assignment"
        )
    ids = D.class_ids()
    pairs = []
    flagged = []
    for i in ids:
        Di = D.block(i)
        for j in ids:
            if j <= i:
                continue
            G = np.abs(Di.T @ D.block(j))
            pairs.append(
                {"classes": [i, j], "max": float(G.max()), "mean": float(G.mean())}
            )
    for k in range(D.n_atoms):
        c = D.atom_class[k]
        other = D.atom_class != c
        if np.any(other):
            top = float(np.max(np.abs(D.atoms[:, other].T @ D.atoms[:, k])))
            if top > tau:
                flagged.append({"atom": k, "class": int(c), "coherence": top})
    return {"tau": tau, "pairs": pairs, "flagged": flagged}
