"""Decision rules: class residuals (Track I, SRC) and classifiers on codes (Track II).

Ties always go to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import LabeledDataset
from .dict_optimize import Dictionary
from .sparse_coding import SolverOptions, batch_sparse_code

DEFAULT_OPTS = SolverOptions(max_iterations=20000, kkt_tolerance=1e-6)


@dataclass
class ClassificationResult:
    label: int
    scores: np.ndarray
    code: np.ndarray
    rule: str  # "residual": lower wins; "score": higher wins


@dataclass
class Metrics:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class],
            "confusion": self.confusion.tolist(),
        }


def _structured(dicts) -> Dictionary:
    if isinstance(dicts, Dictionary):
        if dicts.atom_class is None:
            raise ValueError("residual classification needs per-class dictionaries")
        return dicts
    return Dictionary.from_blocks(list(dicts))


def _flat_mask(mask, n_atoms: int) -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, (list, tuple)):
        mask = np.concatenate([np.asarray(m, dtype=bool).reshape(-1) for m in mask]) if mask else np.zeros(0, bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.size != n_atoms:
        raise ValueError(f"mask has {mask.size} entries for {n_atoms} atoms")
    return mask


def _class_residuals(atoms, atom_class, X, A, classes, mask=None) -> np.ndarray:
    """``scores[c, n] = ||x_n - D_c a_n^c||^2`` with masked coefficients zeroed."""
    if mask is not None and mask.any():
        A = A.copy()
        A[mask] = 0.0
    scores = np.empty((len(classes), X.shape[1]))
    for i, c in enumerate(classes):
        sel = atom_class == c
        R = X - atoms[:, sel] @ A[sel]
        scores[i] = np.einsum("ij,ij->j", R, R)
    return scores


def residual_scores(dicts, X, lam, mask=None, coding="global", opts=None):
    """Batch version of :func:`classify_residual`; returns ``(scores, codes)``."""
    D = _structured(dicts)
    X = np.asarray(X, dtype=float)
    if X.shape[0] != D.n_features:
        raise ValueError(f"signals have dimension {X.shape[0]}, dictionary has {D.n_features}")
    opts = opts or DEFAULT_OPTS
    classes = D.class_ids()
    mask = _flat_mask(mask, D.n_atoms)
    if coding == "global":
        A = batch_sparse_code(D.atoms, X, lam, opts)
        return _class_residuals(D.atoms, D.atom_class, X, A, classes, mask), A
    if coding != "per_class":
        raise ValueError(f"unknown coding mode {coding!r}")
    A = np.zeros((D.n_atoms, X.shape[1]))
    scores = np.empty((len(classes), X.shape[1]))
    for i, c in enumerate(classes):
        sel = D.atom_class == c
        Ac = batch_sparse_code(D.atoms[:, sel], X, lam, opts)
        A[sel] = Ac
        if mask is not None:
            Ac = np.where(mask[sel][:, None], 0.0, Ac)
        R = X - D.atoms[:, sel] @ Ac
        scores[i] = np.einsum("ij,ij->j", R, R)
    return scores, A


def classify_residual(dicts, x, lam, mask=None, coding="global", opts=None) -> ClassificationResult:
    """Code ``x`` over the concatenated class dictionaries and pick the smallest class residual.

    ``mask`` marks atoms (flat, or one boolean array per class) whose
    coefficients are ignored when forming residuals; the returned code is
    the solver's unmasked output.  ``coding="per_class"`` codes ``x`` over each
    class dictionary separately instead.
    """
    D = _structured(dicts)
    scores, A = residual_scores(D, np.asarray(x, float).reshape(-1, 1), lam, mask, coding, opts)
    s = scores[:, 0]
    return ClassificationResult(D.class_ids()[int(np.argmin(s))], s, A[:, 0], "residual")


def src_scores(training: LabeledDataset, X, lam, opts=None):
    """Residuals of every query against every class of the raw training matrix."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != training.n_features:
        raise ValueError(f"signals have dimension {X.shape[0]}, training set has {training.n_features}")
    A = batch_sparse_code(training.signals, X, lam, opts or DEFAULT_OPTS)
    classes = list(range(1, training.n_classes + 1))
    return _class_residuals(training.signals, training.labels, X, A, classes), A


def classify_src(training: LabeledDataset, x, lam, opts=None) -> ClassificationResult:
    """Sparse-representation classification over the raw training columns."""
    scores, A = src_scores(training, np.asarray(x, float).reshape(-1, 1), lam, opts)
    s = scores[:, 0]
    return ClassificationResult(int(np.argmin(s)) + 1, s, A[:, 0], "residual")


def classify_linear(W, code) -> ClassificationResult:
    """Predict ``argmax_c (W code)_c``."""
    W = np.asarray(W, dtype=float)
    code = np.asarray(code, dtype=float).reshape(-1)
    if W.shape[1] != code.size:
        raise ValueError(f"W has {W.shape[1]} columns for a code of length {code.size}")
    s = W @ code
    return ClassificationResult(int(np.argmax(s)) + 1, s, code, "score")


def coding_weight(model) -> float:
    comp = model.composite
    return comp.l1 / comp.fidelity_weight


def _logistic_score(model, X, A) -> np.ndarray:
    theta, b = model.params["theta"], float(model.params["b"][0])
    if theta.ndim == 2:
        return np.einsum("in,ik,kn->n", X, theta, A) + b
    return theta @ A + b


def predict_scores(model, X, lam=None, mask=None, coding="global", opts=None):
    """Per-class scores for a batch of queries.

    Returns ``(scores, codes, rule)``; ``scores`` is ``C x N``.
    """
    X = np.asarray(X, dtype=float)
    opts = opts or DEFAULT_OPTS
    if model.members:
        cols = []
        for member in model.members:
            w = coding_weight(member) if lam is None else lam
            A = batch_sparse_code(member.dictionary.atoms, X, w, opts)
            cols.append(_logistic_score(member, X, A))
        return np.vstack(cols), None, "score"
    if X.shape[0] != model.dictionary.n_features:
        raise ValueError(
            f"signals have dimension {X.shape[0]}, model expects {model.dictionary.n_features}"
        )
    lam = coding_weight(model) if lam is None else lam
    rule = model.composite.decision_rule
    if rule == "residual":
        scores, A = residual_scores(model.dictionary, X, lam, mask, coding, opts)
        return scores, A, "residual"
    A = batch_sparse_code(model.dictionary.atoms, X, lam, opts)
    if rule == "linear":
        return model.params["W"] @ A, A, "score"
    if rule == "logistic":
        f = _logistic_score(model, X, A)
        scores = np.zeros((model.n_classes, X.shape[1]))
        p = model.positive_class
        scores[p - 1] = f
        scores[2 - p] = -f
        return scores, A, "score"
    raise ValueError(f"unknown decision rule {rule!r}")


def predict(model, X, lam=None, mask=None, coding="global", opts=None) -> np.ndarray:
    scores, _, rule = predict_scores(model, X, lam, mask, coding, opts)
    idx = np.argmin(scores, axis=0) if rule == "residual" else np.argmax(scores, axis=0)
    return idx + 1


def classify_model(model, x, lam=None, mask=None, coding="global", opts=None) -> ClassificationResult:
    """Classify one query with whichever rule the model's method uses."""
    known = ("metaface", "dlsi", "supervised_dl", "dksvd", "lcksvd", "fddl", "unified")
    if model.method not in known:
        raise ValueError(f"unknown method tag {model.method!r}")
    x = np.asarray(x, float).reshape(-1, 1)
    scores, A, rule = predict_scores(model, x, lam, mask, coding, opts)
    s = scores[:, 0]
    label = int(np.argmin(s) if rule == "residual" else np.argmax(s)) + 1
    return ClassificationResult(label, s, None if A is None else A[:, 0], rule)


def evaluate_predictions(y_true, y_pred, n_classes: int) -> Metrics:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    conf = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(conf, (y_true - 1, y_pred - 1), 1)
    totals = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, np.diag(conf) / np.maximum(totals, 1), np.nan)
    return Metrics(float(np.mean(y_true == y_pred)), per_class, conf)


def evaluate(model, dataset: LabeledDataset, **kwargs) -> Metrics:
    return evaluate_predictions(dataset.labels, predict(model, dataset.signals, **kwargs), model.n_classes)
