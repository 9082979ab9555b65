"""Constrained dictionary updates and the alternating-minimization driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

NORM_SLACK = 1e-9
CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"


@dataclass
class Dictionary:
    """A ``d x K`` atom matrix, optionally partitioned into class blocks.

    ``atom_class`` holds 1-based class ids, one per atom, with the atoms of a
    class stored contiguously (``D = [D_1, ..., D_C]``).
    """

    atoms: np.ndarray
    atom_class: np.ndarray | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D array")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(norms > 1.0 + NORM_SLACK):
            k = int(np.argmax(norms))
            raise ValueError(f"atom {k} has norm {norms[k]:.12g} > 1")
        if self.atom_class is not None:
            ac = np.asarray(self.atom_class, dtype=int).reshape(-1)
            if ac.size != self.atoms.shape[1]:
                raise ValueError("atom_class length must equal the number of atoms")
            if ac.size and ac.min() < 1:
                raise ValueError("atom class ids must be >= 1")
            seen = set()
            prev = None
            for c in ac:
                if c != prev:
                    if c in seen:
                        raise ValueError("atoms of one class must be contiguous")
                    seen.add(c)
                    prev = c
            self.atom_class = ac

    @property
    def n_features(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def structured(self) -> bool:
        return self.atom_class is not None

    def class_ids(self) -> list[int]:
        if self.atom_class is None:
            raise ValueError("dictionary has no atom-to-class assignment")
        return sorted(set(self.atom_class.tolist()))

    def class_index(self, c: int) -> np.ndarray:
        if self.atom_class is None:
            raise ValueError("dictionary has no atom-to-class assignment")
        return np.flatnonzero(self.atom_class == c)

    def block(self, c: int) -> np.ndarray:
        return self.atoms[:, self.class_index(c)]

    def blocks(self, n_classes: int | None = None) -> list[np.ndarray]:
        ids = range(1, n_classes + 1) if n_classes else self.class_ids()
        return [self.block(c) for c in ids]

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "Dictionary":
        atoms = np.hstack([np.asarray(b, dtype=float) for b in blocks])
        ac = np.concatenate([np.full(np.shape(b)[1], c + 1) for c, b in enumerate(blocks)])
        return cls(atoms, ac)


@dataclass
class TrainingTrace:
    objective: list[float] = field(default_factory=list)
    reason: str = MAX_ITERATIONS

    def is_nonincreasing(self, slack: float = 1e-8) -> bool:
        f = np.asarray(self.objective)
        return bool(np.all(np.diff(f) <= slack))


class BlockIncreaseError(RuntimeError):
    """A block update increased the full objective beyond the allowed slack."""

    def __init__(self, block: str, before: float, after: float):
        super().__init__(
            f"block {block!r} increased the objective from {before!r} to {after!r}"
        )
        self.block = block
        self.before = before
        self.after = after


def project_columns(D: np.ndarray) -> np.ndarray:
    """Scale each column ``c`` to ``c / max(1, ||c||)``."""
    D = np.array(D, dtype=float, copy=True)
    norms = np.linalg.norm(D, axis=0)
    over = norms > 1.0
    D[:, over] /= norms[over]
    return D


def _as_atoms(D) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(D, Dictionary):
        return D.atoms.copy(), D.atom_class
    return np.array(D, dtype=float, copy=True), None


def _replacement_columns(X: np.ndarray, R: np.ndarray, count: int) -> list[np.ndarray]:
    """Normalized data columns, worst-reconstructed first."""
    order = np.argsort(-np.einsum("ij,ij->j", R, R), kind="stable")
    out = []
    for n in order:
        nrm = np.linalg.norm(X[:, n])
        if nrm > 0:
            out.append(X[:, n] / nrm)
        if len(out) == count:
            break
    return out


def bcd_least_squares(X: np.ndarray, A: np.ndarray, D: np.ndarray, reinit_dead: bool = True) -> np.ndarray:
    """One exact block-coordinate sweep over the atoms of ``min ||X - D A||^2``.

    Each column subproblem is an isotropic quadratic, so the projection of its
    unconstrained minimizer onto the unit ball is the exact constrained
    minimizer.  Modifies and returns ``D``.
    """
    R = X - D @ A
    row_sq = np.einsum("ij,ij->i", A, A)
    dead = []
    for k in range(D.shape[1]):
        a = row_sq[k]
        if a == 0.0:
            dead.append(k)
            continue
        old = D[:, k].copy()
        target = (R @ A[k] + old * a) / a
        nrm = np.linalg.norm(target)
        new = target / nrm if nrm > 1.0 else target
        R -= np.outer(new - old, A[k])
        D[:, k] = new
    if dead and reinit_dead:
        # a zero coefficient row leaves D A unchanged, so any replacement is free
        for k, col in zip(dead, _replacement_columns(X, R, len(dead))):
            D[:, k] = col
    return D


def update_dictionary_ls(X: np.ndarray, A: np.ndarray, D_init) -> Dictionary:
    """Update the atoms for ``min_D ||X - D A||_F^2`` s.t. ``||d_k|| <= 1``.

    Atoms whose coefficient row is all zero are replaced by the normalized data
    column with the largest reconstruction error.  The objective never
    increases.
    """
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    D, ac = _as_atoms(D_init)
    if X.shape[0] != D.shape[0] or A.shape != (D.shape[1], X.shape[1]):
        raise ValueError(f"shape mismatch: X {X.shape}, A {A.shape}, D {D.shape}")
    return Dictionary(bcd_least_squares(X, A, project_columns(D)), ac)


def incoherence_gram(other_dicts: Sequence[np.ndarray], d: int) -> np.ndarray:
    M = np.zeros((d, d))
    for Dj in other_dicts:
        Dj = Dj.atoms if isinstance(Dj, Dictionary) else np.asarray(Dj, dtype=float)
        M += Dj @ Dj.T
    return M


def _ball_quadratic(h: np.ndarray, U: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimize ``d^T H d - 2 b^T d`` over ``||d|| <= 1`` with ``H = U diag(h) U^T``, ``h > 0``."""
    beta = U.T @ b
    inside = beta / h
    if np.linalg.norm(inside) <= 1.0:
        return U @ inside

    def excess(mu):
        return np.linalg.norm(beta / (h + mu)) - 1.0

    hi = max(np.linalg.norm(beta), 1e-300)
    mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    d = U @ (beta / (h + mu))
    return d / np.linalg.norm(d)


def bcd_incoherent(
    X: np.ndarray, A: np.ndarray, D: np.ndarray, M: np.ndarray, eta: float
) -> np.ndarray:
    """Atom-wise exact sweep for ``||X - D A||^2 + eta * tr(D^T M D)``.

    ``M`` is the (fixed) Gram sum of the other class dictionaries.  Each atom
    solves a ball-constrained quadratic (a trust-region subproblem) through
    the eigendecomposition of ``M``.
    """
    lam_M, U = np.linalg.eigh(M)
    lam_M = np.maximum(lam_M, 0.0)
    R = X - D @ A
    row_sq = np.einsum("ij,ij->i", A, A)
    dead = []

    def cost(d, a, b):
        return a * (d @ d) + eta * (d @ M @ d) - 2.0 * (b @ d)

    for k in range(D.shape[1]):
        a = row_sq[k]
        if a == 0.0:
            dead.append(k)
            continue
        old = D[:, k].copy()
        b = R @ A[k] + old * a
        new = _ball_quadratic(a + eta * lam_M, U, b)
        if cost(new, a, b) > cost(old, a, b):
            new = old
        R -= np.outer(new - old, A[k])
        D[:, k] = new
    if dead:
        for k, col in zip(dead, _replacement_columns(X, R, len(dead))):
            if col @ M @ col <= D[:, k] @ M @ D[:, k]:
                D[:, k] = col
    return D


def update_dictionary_incoherent(
    X_i: np.ndarray,
    A_i: np.ndarray,
    D_i_init,
    other_dicts: Sequence,
    eta: float,
) -> Dictionary:
    """Update one class dictionary under the structured-incoherence penalty.

    Decreases ``||X_i - D_i A_i||_F^2 + eta * sum_j ||D_i^T D_j||_F^2`` over
    the other dictionaries ``D_j`` (held fixed), subject to unit-ball atoms.
    With ``eta == 0`` this is exactly :func:`update_dictionary_ls`.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    X_i = np.asarray(X_i, dtype=float)
    A_i = np.asarray(A_i, dtype=float)
    D, ac = _as_atoms(D_i_init)
    if eta == 0 or not other_dicts:
        return update_dictionary_ls(X_i, A_i, Dictionary(project_columns(D), ac))
    M = incoherence_gram(other_dicts, D.shape[0])
    return Dictionary(bcd_incoherent(X_i, A_i, project_columns(D), M, eta), ac)


@dataclass
class Block:
    """A named in-place update of the optimization state."""

    name: str
    update: Callable[[Any], None]


def alternate_minimize(
    objective: Callable[[Any], float],
    state: Any,
    blocks: Sequence[Block],
    max_outer: int = 100,
    tol: float = 1e-5,
    slack: float = 1e-8,
) -> tuple[Any, TrainingTrace]:
    """Cycle through ``blocks`` until the relative objective change drops below ``tol``.

    The objective is recorded before the first and after every outer
    iteration.  Every block must be non-increasing for the full objective; a
    block that raises it by more than ``slack`` aborts the run with
    :class:`BlockIncreaseError`.
    """
    if max_outer < 0:
        raise ValueError("max_outer must be nonnegative")
    f = float(objective(state))
    trace = TrainingTrace([f], MAX_ITERATIONS)
    for it in range(max_outer):
        f_start = f
        for block in blocks:
            block.update(state)
            f_new = float(objective(state))
            if f_new > f + slack:
                raise BlockIncreaseError(block.name, f, f_new)
            f = f_new
        trace.objective.append(f)
        change = (f_start - f) / abs(f_start) if f_start != 0 else 0.0
        logger.debug("outer %d: objective %.10g (rel. change %.3e)", it + 1, f, change)
        if change < tol:
            trace.reason = CONVERGED
            break
    return state, trace
