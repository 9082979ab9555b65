"""Labeled signal datasets: CSV ingestion, synthetic planted problems, splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Signals as the columns of a ``d x N`` matrix with 1-based class labels."""

    signals: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if self.signals.ndim != 2:
            raise DataError("signals must be a d x N matrix")
        d, n = self.signals.shape
        if n < 1 or d < 1:
            raise DataError("a dataset needs at least one signal of dimension >= 1")
        if self.labels.size != n:
            raise DataError(f"{self.labels.size} labels for {n} signals")
        if self.labels.min() < 1:
            raise DataError("labels must be >= 1")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max())
        elif self.labels.max() > self.n_classes:
            raise DataError(f"label {self.labels.max()} exceeds class count {self.n_classes}")

    @property
    def n_features(self) -> int:
        return self.signals.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signals.shape[1]

    def class_index(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def class_signals(self, c: int) -> np.ndarray:
        return self.signals[:, self.labels == c]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes + 1)[1:]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=int)
        return LabeledDataset(self.signals[:, index], self.labels[index], self.n_classes)


def load_csv(path) -> LabeledDataset:
    """Read rows ``label,f1,...,fd`` (no header); each row becomes one signal column."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataError(f"line {lineno}: expected a label and at least one feature")
            elif len(row) != width:
                raise DataError(f"line {lineno}: expected {width} fields, found {len(row)}")
            try:
                label = int(row[0])
            except ValueError:
                raise DataError(f"line {lineno}: label {row[0]!r} is not an integer") from None
            if label < 1:
                raise DataError(f"line {lineno}: label {label} must be >= 1")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows).T, np.array(labels))


def save_csv(dataset: LabeledDataset, path) -> None:
    # repr() gives the shortest string that round-trips a double exactly
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for n in range(dataset.n_samples):
            writer.writerow([int(dataset.labels[n])] + [repr(float(v)) for v in dataset.signals[:, n]])


def normalize_signals(dataset: LabeledDataset, mode: str = "unit_l2") -> LabeledDataset:
    if mode == "none":
        return dataset
    if mode != "unit_l2":
        raise ValueError(f"unknown normalization mode {mode!r}")
    X = dataset.signals.copy()
    norms = np.linalg.norm(X, axis=0)
    nz = norms > 0
    X[:, nz] /= norms[nz]
    return LabeledDataset(X, dataset.labels.copy(), dataset.n_classes)


def split(dataset: LabeledDataset, fraction: float, seed: int = 0):
    """Stratified train/test split; each class keeps at least one training sample."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(1, dataset.n_classes + 1):
        idx = dataset.class_index(c)
        if idx.size == 0:
            raise DataError(f"class {c} has no samples; cannot keep one for training")
        idx = rng.permutation(idx)
        n_train = max(1, int(np.floor(fraction * idx.size + 0.5)))
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train:].tolist())
    if not test:
        raise DataError(f"fraction {fraction} leaves no test samples")
    return dataset.subset(sorted(train)), dataset.subset(sorted(test))


@dataclass(frozen=True)
class SynthSpec:
    """Planted class-dictionary problem.

    Coefficients are positive, drawn from U(0.5, 1); ``signed=True`` gives them
    random signs.  A sign-symmetric class cannot be separated by a linear rule
    on lasso codes, since the code of ``-x`` is minus the code of ``x``.
    ``coherence`` in [0, 1] blends each planted atom with a random direction:
    0 keeps the class blocks exactly orthogonal (when ``n_features`` allows),
    1 gives unrelated random atoms.  ``shared_atoms`` atoms are common to every
    class and enter each sample with a large coefficient, which makes the
    classes overlap; each is active in a sample with probability
    ``shared_rate``.
    """

    n_classes: int = 4
    n_features: int = 32
    atoms_per_class: int = 6
    samples_per_class: int = 80
    sparsity: int = 3
    noise: float = 0.01
    coherence: float = 0.0
    shared_atoms: int = 0
    shared_rate: float = 1.0
    signed: bool = False
    seed: int = 0

    def validate(self):
        for name in ("n_classes", "n_features", "atoms_per_class", "samples_per_class", "sparsity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not 0.0 <= self.coherence <= 1.0:
            raise ValueError("coherence must lie in [0, 1]")
        if not 0.0 <= self.shared_rate <= 1.0:
            raise ValueError("shared_rate must lie in [0, 1]")
        if self.shared_atoms < 0:
            raise ValueError("shared_atoms must be nonnegative")
        if self.sparsity > self.atoms_per_class:
            raise ValueError("sparsity cannot exceed atoms_per_class")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=0)


def synth_planted(spec: SynthSpec):
    """Draw a dataset from planted per-class dictionaries.

    Returns ``(dataset, dictionaries)`` where ``dictionaries[c]`` is the
    ground-truth unit-atom dictionary of class ``c + 1`` (own atoms first,
    then any shared atoms).  Samples are grouped by class.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, d, k, s = spec.n_classes, spec.n_features, spec.atoms_per_class, spec.shared_atoms
    total = C * k + s
    G = rng.standard_normal((d, total))
    if d >= total:
        base, _ = np.linalg.qr(G)
    else:
        base = _unit(G)
    if spec.coherence > 0:
        base = _unit((1.0 - spec.coherence) * base + spec.coherence * _unit(rng.standard_normal((d, total))))
    base = _unit(base)
    shared = base[:, C * k:]
    dicts = [np.hstack([base[:, c * k:(c + 1) * k], shared]) for c in range(C)]

    n = spec.samples_per_class
    X = np.empty((d, C * n))
    labels = np.repeat(np.arange(1, C + 1), n)
    for c in range(C):
        own = base[:, c * k:(c + 1) * k]
        for i in range(n):
            support = rng.choice(k, size=spec.sparsity, replace=False)
            coef = rng.uniform(0.5, 1.0, spec.sparsity)
            if spec.signed:
                coef *= rng.choice([-1.0, 1.0], size=spec.sparsity)
            x = own[:, support] @ coef
            if s:
                shared_coef = rng.uniform(1.0, 2.0, s) * (rng.random(s) < spec.shared_rate)
                if spec.signed:
                    shared_coef *= rng.choice([-1.0, 1.0], size=s)
                x = x + shared @ shared_coef
            X[:, c * n + i] = x
    if spec.noise > 0:
        X += spec.noise * rng.standard_normal(X.shape)
    return LabeledDataset(X, labels, C), dicts


def save_dictionaries(dicts, path) -> None:
    """Write ground-truth atoms as CSV rows ``class,f1,...,fd``."""
    blocks = [np.asarray(D) for D in dicts]
    atoms = np.hstack(blocks)
    labels = np.concatenate([np.full(D.shape[1], c + 1) for c, D in enumerate(blocks)])
    save_csv(LabeledDataset(atoms, labels, len(blocks)), path)


def mean_signal_norm(dataset: LabeledDataset) -> float:
    return float(np.mean(np.linalg.norm(dataset.signals, axis=0)))


def ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
