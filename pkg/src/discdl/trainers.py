"""Discriminative dictionary-learning trainers.

All methods are instances of one composite objective

    fidelity(X, D, A; labels) + eta * discrimination(W, A, labels)
        + l1 * ||A||_1 + reg_w * ||W||^2,   atoms in the unit ball,

and are trained by the same alternating-minimization driver.  The named
trainers (``train_metaface`` ... ``train_fddl``) map their hyperparameters onto
a :class:`Composite`; ``train_unified`` builds one from free term choices.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .data_io import LabeledDataset, mean_signal_norm
from .dict_optimize import (
    Block,
    Dictionary,
    TrainingTrace,
    alternate_minimize,
    bcd_incoherent,
    bcd_least_squares,
    incoherence_gram,
    project_columns,
)
from .discriminators import (
    build_consistency_matrix,
    build_label_indicator,
    fisher_term,
    logistic_loss,
    logistic_slope,
    total_incoherence,
)
from .sparse_coding import SolverOptions, code_signals, power_iteration, proximal_gradient

logger = logging.getLogger(__name__)

METHODS = ("metaface", "dlsi", "supervised_dl", "dksvd", "lcksvd", "fddl", "unified")
TRACKS = {
    "metaface": "I",
    "dlsi": "I",
    "supervised_dl": "II",
    "dksvd": "II",
    "lcksvd": "II",
    "fddl": "II",
}
FIDELITIES = ("plain", "class_partitioned", "discriminative")
DISCRIMINATIONS = ("none", "linear_regression", "label_consistent", "logistic", "fisher")
RIDGE = 1e-6
_WEIGHTS = (
    "lam", "lambda0", "lambda1", "lambda2", "lambda3", "eta", "incoherence",
    "elastic", "regression_weight", "fidelity_weight", "lambda_a", "lambda_w",
)


class ConfigError(ValueError):
    pass


@dataclass
class MethodConfig:
    """Hyperparameters for one training run.

    Unset weights are filled by :meth:`resolve`: every l1 weight defaults to
    ``0.1 * mean ||x||``, discrimination weights to 1.0, the DLSI incoherence
    weight ``eta`` to 0.5 and the FDDL elastic weight ``eta`` to 1.0.

    Per method:

    * metaface: ``lam``
    * dlsi: ``lam``, ``eta`` (incoherence)
    * supervised_dl: ``lambda0`` (reconstruction), ``lambda1`` (l1),
      ``lambda2`` (classifier ridge), ``classifier`` in {linear, bilinear}
    * dksvd: ``lambda1`` (regression), ``lambda2`` (l1), ``lambda3`` (ridge on W,
      dropped during optimization)
    * lcksvd: ``lambda1`` (consistency), ``lambda2`` (regression), ``lambda3`` (l1)
    * fddl: ``lambda1`` (l1), ``lambda2`` (Fisher), ``eta`` (elastic)
    * unified: ``fidelity``, ``discrimination``, ``eta``, ``lambda_a``,
      ``lambda_w``, ``incoherence``, ``elastic``, ``regression_weight``,
      ``fidelity_weight``
    """

    method: str
    atoms_per_class: int | None = None
    n_atoms: int | None = None
    lam: float | None = None
    lambda0: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    eta: float | None = None
    classifier: str = "linear"
    fidelity: str = "plain"
    discrimination: str = "linear_regression"
    incoherence: float = 0.0
    elastic: float = 1.0
    regression_weight: float = 1.0
    fidelity_weight: float = 1.0
    lambda_a: float | None = None
    lambda_w: float = 0.0
    seed: int = 0
    max_outer: int = 100
    tol: float = 1e-5
    inner_tol: float = 1e-6
    inner_max_iter: int = 1000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    def validate(self):
        if self.atoms_per_class is None and self.n_atoms is None:
            raise ConfigError("missing required key 'atoms_per_class' (or 'n_atoms')")
        for key in ("atoms_per_class", "n_atoms", "max_outer", "inner_max_iter"):
            v = getattr(self, key)
            if v is not None and v < 1:
                raise ConfigError(f"{key} must be a positive integer")
        for key in _WEIGHTS:
            v = getattr(self, key)
            if v is not None and v < 0:
                raise ConfigError(f"{key} must be nonnegative")
        if self.tol <= 0 or self.inner_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.classifier not in ("linear", "bilinear"):
            raise ConfigError("classifier must be 'linear' or 'bilinear'")
        if self.fidelity not in FIDELITIES:
            raise ConfigError(f"fidelity must be one of {', '.join(FIDELITIES)}")
        if self.discrimination not in DISCRIMINATIONS:
            raise ConfigError(f"discrimination must be one of {', '.join(DISCRIMINATIONS)}")

    def resolve(self, dataset: LabeledDataset) -> "MethodConfig":
        """Return a copy with every defaulted weight filled in for ``dataset``."""
        self.validate()
        l1 = 0.1 * mean_signal_norm(dataset)
        fill: dict = {}

        def default(key, value):
            if getattr(self, key) is None:
                fill[key] = value

        m = self.method
        if m in ("metaface", "dlsi"):
            default("lam", l1)
            if m == "dlsi":
                default("eta", 0.5)
        elif m == "supervised_dl":
            default("lambda0", 1.0)
            default("lambda1", l1)
            default("lambda2", 1.0)
        elif m == "dksvd":
            default("lambda1", 1.0)
            default("lambda2", l1)
            default("lambda3", 0.0)
        elif m == "lcksvd":
            default("lambda1", 1.0)
            default("lambda2", 1.0)
            default("lambda3", l1)
        elif m == "fddl":
            default("lambda1", l1)
            default("lambda2", 1.0)
            default("eta", 1.0)
        elif m == "unified":
            default("eta", 1.0)
            default("lambda_a", l1)
        return dataclasses.replace(self, **fill)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Composite:
    """Resolved term selection and weights of the composite objective."""

    fidelity: str
    discrimination: str
    eta: float
    l1: float
    reg_w: float = 0.0
    fidelity_weight: float = 1.0
    incoherence: float = 0.0
    elastic: float = 0.0
    regression_weight: float = 0.0
    classifier: str = "linear"

    @property
    def active_discrimination(self) -> str:
        # a zero weight removes the term from the objective altogether
        if self.discrimination == "label_consistent" and self.regression_weight > 0:
            return self.discrimination
        return "none" if self.eta == 0 else self.discrimination

    @property
    def decision_rule(self) -> str:
        if self.fidelity in ("class_partitioned", "discriminative"):
            return "residual"
        if self.discrimination in ("linear_regression", "label_consistent"):
            return "linear"
        if self.discrimination == "logistic":
            return "logistic"
        return "residual"

    @property
    def track(self) -> str:
        labeled = self.fidelity != "plain" or self.incoherence > 0
        coded = self.active_discrimination != "none"
        if labeled and coded:
            return "I+II"
        return "II" if coded else "I"


def composite_for(cfg: MethodConfig) -> Composite:
    m = cfg.method
    if m == "metaface":
        return Composite("class_partitioned", "none", 0.0, cfg.lam)
    if m == "dlsi":
        return Composite("class_partitioned", "none", 0.0, cfg.lam, incoherence=cfg.eta)
    if m == "supervised_dl":
        return Composite(
            "plain", "logistic", 1.0, cfg.lambda1, reg_w=cfg.lambda2,
            fidelity_weight=cfg.lambda0, classifier=cfg.classifier,
        )
    if m == "dksvd":
        return Composite("plain", "linear_regression", cfg.lambda1, cfg.lambda2, reg_w=cfg.lambda3)
    if m == "lcksvd":
        return Composite(
            "plain", "label_consistent", cfg.lambda1, cfg.lambda3, regression_weight=cfg.lambda2
        )
    if m == "fddl":
        return Composite("discriminative", "fisher", cfg.lambda2, cfg.lambda1, elastic=cfg.eta)
    return Composite(
        cfg.fidelity,
        cfg.discrimination,
        cfg.eta,
        cfg.lambda_a,
        reg_w=cfg.lambda_w,
        fidelity_weight=cfg.fidelity_weight,
        incoherence=cfg.incoherence,
        elastic=cfg.elastic,
        regression_weight=cfg.regression_weight,
        classifier=cfg.classifier,
    )


@dataclass
class TrainedModel:
    method: str
    dictionary: Dictionary
    config: MethodConfig
    trace: TrainingTrace
    n_classes: int
    params: dict = field(default_factory=dict)
    members: list = field(default_factory=list)
    positive_class: int | None = None
    codes: np.ndarray | None = None

    @property
    def composite(self) -> Composite:
        return composite_for(self.config)

    @property
    def track(self) -> str:
        return TRACKS.get(self.method) or self.composite.track

    @property
    def final_objective(self) -> float:
        return self.trace.objective[-1]


# ---------------------------------------------------------------------------
# shared helpers


def _inner_opts(cfg: MethodConfig) -> SolverOptions:
    return SolverOptions(max_iterations=cfg.inner_max_iter, kkt_tolerance=cfg.inner_tol)


def _atom_counts(cfg: MethodConfig, n_classes: int) -> list[int]:
    if cfg.atoms_per_class is not None:
        return [cfg.atoms_per_class] * n_classes
    if cfg.n_atoms < n_classes:
        raise ConfigError(f"n_atoms={cfg.n_atoms} is smaller than the number of classes")
    return [len(part) for part in np.array_split(np.arange(cfg.n_atoms), n_classes)]


def _check_classes(dataset: LabeledDataset):
    counts = dataset.class_counts()
    for c, n in enumerate(counts, start=1):
        if n == 0:
            raise ValueError(f"class {c} has no training samples")


def _init_blocks(dataset: LabeledDataset, counts: list[int], rng) -> list[np.ndarray]:
    """Per-class blocks of randomly chosen, unit-normalized data columns."""
    d = dataset.n_features
    blocks = []
    for c, k in enumerate(counts, start=1):
        Xc = dataset.class_signals(c)
        pick = rng.choice(Xc.shape[1], size=min(k, Xc.shape[1]), replace=False)
        cols = [Xc[:, j] for j in pick]
        while len(cols) < k:
            cols.append(rng.standard_normal(d))
        B = np.stack(cols, axis=1)
        norms = np.linalg.norm(B, axis=0)
        for j in np.flatnonzero(norms == 0):
            B[:, j] = rng.standard_normal(d)
        blocks.append(B / np.linalg.norm(B, axis=0))
    return blocks


def _ridge(T: np.ndarray, A: np.ndarray, reg: float = RIDGE) -> np.ndarray:
    """``argmin_W ||T - W A||^2 + reg ||W||^2``."""
    K = A.shape[0]
    return np.linalg.solve(A @ A.T + reg * np.eye(K), A @ T.T).T


def _class_order(dataset: LabeledDataset) -> list[np.ndarray]:
    return [dataset.class_index(c) for c in range(1, dataset.n_classes + 1)]


# ---------------------------------------------------------------------------
# problem families


class _ClassPartitioned:
    """Per-class dictionaries, each coding only its own class (Track I)."""

    def __init__(self, dataset, comp: Composite, cfg: MethodConfig):
        if comp.fidelity_weight <= 0:
            raise ConfigError("fidelity_weight must be positive")
        self.comp, self.cfg = comp, cfg
        self.opts = _inner_opts(cfg)
        self.X = [dataset.class_signals(c) for c in range(1, dataset.n_classes + 1)]
        self.lam = comp.l1 / comp.fidelity_weight
        self.eta = comp.incoherence / comp.fidelity_weight
        rng = np.random.default_rng(cfg.seed)
        self.D = _init_blocks(dataset, _atom_counts(cfg, dataset.n_classes), rng)
        self.A = [code_signals(D, X, self.lam, self.opts)[0] for D, X in zip(self.D, self.X)]

    def objective(self, _=None) -> float:
        w = self.comp.fidelity_weight
        f = 0.0
        for D, A, X in zip(self.D, self.A, self.X):
            R = X - D @ A
            f += w * np.sum(R * R) + self.comp.l1 * np.abs(A).sum()
        if self.comp.incoherence:
            f += self.comp.incoherence * total_incoherence(self.D)
        return float(f)

    def update_codes(self, _=None):
        self.A = [
            code_signals(D, X, self.lam, self.opts, init=A)[0]
            for D, X, A in zip(self.D, self.X, self.A)
        ]

    def update_dictionaries(self, _=None):
        for i, (X, A) in enumerate(zip(self.X, self.A)):
            if self.eta == 0:
                self.D[i] = bcd_least_squares(X, A, self.D[i])
            else:
                others = [D for j, D in enumerate(self.D) if j != i]
                M = incoherence_gram(others, X.shape[0])
                # the ordered-pair sum counts every cross term twice
                self.D[i] = bcd_incoherent(X, A, self.D[i], M, 2.0 * self.eta)

    def blocks(self):
        return [Block("codes", self.update_codes), Block("dictionaries", self.update_dictionaries)]

    def finish(self, dataset):
        codes = np.zeros((sum(D.shape[1] for D in self.D), dataset.n_samples))
        offset = 0
        for c, (D, A) in enumerate(zip(self.D, self.A), start=1):
            codes[offset:offset + D.shape[1], dataset.class_index(c)] = A
            offset += D.shape[1]
        return Dictionary.from_blocks(self.D), {}, codes


def stack_terms(X, D, terms):
    """Fold weighted regression terms into one least-squares fit.

    ``terms`` holds ``(weight, target, param)`` triples.  With
    ``X~ = [X; sqrt(w) T ...]`` and ``D~ = [D; sqrt(w) P ...]``,
    ``||X - D A||^2 + sum w ||T - P A||^2 = ||X~ - D~ A||^2`` for every ``A``.
    """
    rows_X = [np.asarray(X, float)]
    rows_D = [np.asarray(D, float)]
    for w, T, P in terms:
        rows_X.append(np.sqrt(w) * np.asarray(T, float))
        rows_D.append(np.sqrt(w) * np.asarray(P, float))
    return np.vstack(rows_X), np.vstack(rows_D)


def unstack_dictionary(Dt, d: int, terms):
    """Split a stacked dictionary back into ``D`` and the term parameters.

    ``terms`` holds ``(weight, n_rows)`` pairs in stacking order.  The atoms
    of ``D`` are rescaled to unit norm; each parameter column is divided by
    the same norm so that ``P @ A`` is unchanged once the codes are scaled up.
    Returns ``(D, params, norms)``; zero atoms keep norm 1.
    """
    D = Dt[:d].copy()
    norms = np.linalg.norm(D, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    D /= scale
    params = []
    row = d
    for w, n in terms:
        params.append(Dt[row:row + n] / np.sqrt(w) / scale)
        row += n
    return D, params, scale


class _Stacked:
    """One global dictionary; regression-type terms folded in by row stacking."""

    def __init__(self, dataset, comp: Composite, cfg: MethodConfig, atom_class=None):
        if comp.fidelity_weight != 1.0:
            raise ConfigError("fidelity_weight other than 1 is only supported with logistic discrimination")
        self.comp, self.cfg = comp, cfg
        self.opts = _inner_opts(cfg)
        C = dataset.n_classes
        rng = np.random.default_rng(cfg.seed)
        blocks = _init_blocks(dataset, _atom_counts(cfg, C), rng)
        D0 = np.hstack(blocks)
        if atom_class is None:
            atom_class = np.concatenate([np.full(b.shape[1], c + 1) for c, b in enumerate(blocks)])
        self.atom_class = np.asarray(atom_class, dtype=int)
        if self.atom_class.size != D0.shape[1]:
            raise ConfigError("atom_class length does not match the number of atoms")
        X = dataset.signals
        A0 = code_signals(D0, X, comp.l1, self.opts)[0]

        disc = comp.active_discrimination
        H = build_label_indicator(dataset.labels, C)
        self.parts = []  # (name, weight, target)
        if disc == "linear_regression":
            self.parts.append(("W", comp.eta, H))
        elif disc == "label_consistent":
            if comp.eta > 0:
                Q = build_consistency_matrix(dataset.labels, self.atom_class)
                self.parts.append(("G", comp.eta, Q))
            if comp.regression_weight > 0:
                self.parts.append(("W", comp.regression_weight, H))
        self.d = X.shape[0]
        self.Xt, Dt = stack_terms(X, D0, [(w, T, _ridge(T, A0)) for _, w, T in self.parts])
        self.Dt = project_columns(Dt)
        self.A = A0
        self.H = H
        self.labels = dataset.labels

    def objective(self, _=None) -> float:
        R = self.Xt - self.Dt @ self.A
        return float(np.sum(R * R) + self.comp.l1 * np.abs(self.A).sum())

    def update_codes(self, _=None):
        self.A = code_signals(self.Dt, self.Xt, self.comp.l1, self.opts, init=self.A)[0]

    def update_dictionary(self, _=None):
        self.Dt = bcd_least_squares(self.Xt, self.A, self.Dt)

    def blocks(self):
        return [Block("codes", self.update_codes), Block("dictionary", self.update_dictionary)]

    def finish(self, dataset):
        D, mats, scale = unstack_dictionary(self.Dt, self.d, [(w, T.shape[0]) for _, w, T in self.parts])
        # codes over the renormalized atoms are A scaled up by the old norms
        codes = self.A * scale[:, None]
        params = {name: M for (name, _, _), M in zip(self.parts, mats)}
        disc = self.comp.discrimination
        needed = {"linear_regression": ["W"], "label_consistent": ["G", "W"]}.get(disc, [])
        for name in needed:
            if name not in params:
                T = self.H if name == "W" else build_consistency_matrix(self.labels, self.atom_class)
                params[name] = _ridge(T, codes)
        keep_classes = disc in ("label_consistent", "fisher", "none")
        return Dictionary(D, self.atom_class if keep_classes else None), params, codes


def _logistic_features(X, A, bilinear: bool) -> np.ndarray:
    """Rows are per-sample features so that ``f = phi @ theta + b``."""
    if bilinear:
        return np.einsum("in,kn->nik", X, A).reshape(A.shape[1], -1)
    return A.T


def fit_logistic(Phi, y, reg, theta0, b0, weight=1.0, max_iter=100):
    """Damped Newton for ``weight * sum log(1+exp(-y (Phi theta + b))) + reg ||theta||^2``.

    Starts from ``(theta0, b0)``; Armijo backtracking keeps every accepted step
    non-increasing.
    """
    n, p = Phi.shape
    Z = np.hstack([Phi, np.ones((n, 1))])
    w = np.concatenate([np.asarray(theta0, dtype=float).reshape(-1), [float(b0)]])
    pen = np.full(p + 1, reg)
    pen[-1] = 0.0

    def value(w):
        return weight * float(np.sum(logistic_loss(y * (Z @ w)))) + float(np.sum(pen * w * w))

    f = value(w)
    for _ in range(max_iter):
        m = y * (Z @ w)
        s = -logistic_slope(m)  # sigmoid(-m)
        g = -weight * Z.T @ (y * s) + 2.0 * pen * w
        if np.linalg.norm(g) <= 1e-10 * max(1.0, abs(f)):
            break
        curv = weight * s * (1.0 - s)
        Hm = (Z * curv[:, None]).T @ Z + np.diag(2.0 * pen + 1e-10)
        try:
            step = np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            step = g
        if step @ g <= 0:
            step = g
        t = 1.0
        while t > 1e-12:
            w_new = w - t * step
            f_new = value(w_new)
            if f_new <= f - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break
        if f - f_new <= 1e-15 * max(1.0, abs(f)):
            w, f = w_new, f_new
            break
        w, f = w_new, f_new
    return w[:-1].reshape(np.shape(theta0)), float(w[-1])


class _Logistic:
    """Binary reconstruction + logistic loss on a (bi)linear classifier of the codes."""

    def __init__(self, dataset, y, comp: Composite, cfg: MethodConfig):
        if comp.fidelity_weight <= 0:
            raise ConfigError("fidelity_weight (lambda0) must be positive")
        self.comp, self.cfg = comp, cfg
        self.opts = _inner_opts(cfg)
        self.bilinear = comp.classifier == "bilinear"
        self.X = dataset.signals
        self.y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(cfg.seed)
        self.D = np.hstack(_init_blocks(dataset, _atom_counts(cfg, dataset.n_classes), rng))
        self.A = code_signals(self.D, self.X, comp.l1 / comp.fidelity_weight, self.opts)[0]
        Phi = _logistic_features(self.X, self.A, self.bilinear)
        coef = _ridge(self.y[None, :], np.vstack([Phi.T, np.ones((1, Phi.shape[0]))]))[0]
        shape = (self.X.shape[0], self.D.shape[1]) if self.bilinear else (self.D.shape[1],)
        self.theta = coef[:-1].reshape(shape)
        self.b = float(coef[-1])

    def _effective_theta(self, cols):
        if self.bilinear:
            return self.theta.T @ self.X[:, cols]
        return np.repeat(self.theta[:, None], len(cols), axis=1)

    def scores(self, A=None, cols=None) -> np.ndarray:
        A = self.A if A is None else A
        cols = np.arange(self.X.shape[1]) if cols is None else cols
        return np.einsum("kn,kn->n", self._effective_theta(cols), A) + self.b

    def objective(self, _=None) -> float:
        c = self.comp
        R = self.X - self.D @ self.A
        f = c.eta * np.sum(logistic_loss(self.y * self.scores()))
        f += c.fidelity_weight * np.sum(R * R) + c.l1 * np.abs(self.A).sum()
        f += c.reg_w * np.sum(self.theta * self.theta)
        return float(f)

    def update_codes(self, _=None):
        c = self.comp
        D, X, y = self.D, self.X, self.y
        eff_all = self._effective_theta(np.arange(X.shape[1]))

        def smooth(A, cols):
            R = X[:, cols] - D @ A
            eff = eff_all[:, cols]
            m = y[cols] * (np.einsum("kn,kn->n", eff, A) + self.b)
            val = c.eta * logistic_loss(m) + c.fidelity_weight * np.einsum("ij,ij->j", R, R)
            grad = c.eta * eff * (y[cols] * logistic_slope(m)) - 2.0 * c.fidelity_weight * (D.T @ R)
            return np.atleast_1d(val), grad

        L = 2.0 * c.fidelity_weight * power_iteration(D.T @ D)
        L += 0.25 * c.eta * float(np.max(np.sum(eff_all * eff_all, axis=0)))
        self.A, _ = proximal_gradient(
            smooth, c.l1, self.A, L, max_iter=self.opts.max_iterations, tol=self.opts.kkt_tolerance
        )

    def update_dictionary(self, _=None):
        self.D = bcd_least_squares(self.X, self.A, self.D)

    def update_classifier(self, _=None):
        Phi = _logistic_features(self.X, self.A, self.bilinear)
        self.theta, self.b = fit_logistic(
            Phi, self.y, self.comp.reg_w, self.theta, self.b, weight=self.comp.eta
        )

    def blocks(self):
        return [
            Block("codes", self.update_codes),
            Block("dictionary", self.update_dictionary),
            Block("classifier", self.update_classifier),
        ]

    def finish(self, dataset):
        return Dictionary(self.D), {"theta": self.theta.copy(), "b": np.array([self.b])}, self.A


class _Fisher:
    """Structured dictionary with optional discriminative fidelity and Fisher code term."""

    def __init__(self, dataset, comp: Composite, cfg: MethodConfig):
        if comp.fidelity_weight != 1.0:
            raise ConfigError("fidelity_weight other than 1 is only supported with logistic discrimination")
        self.comp, self.cfg = comp, cfg
        self.opts = _inner_opts(cfg)
        self.discriminative = comp.fidelity == "discriminative"
        self.fisher_weight = comp.eta if comp.active_discrimination == "fisher" else 0.0
        self.X = dataset.signals
        self.labels = dataset.labels
        self.C = dataset.n_classes
        self.cols = _class_order(dataset)
        rng = np.random.default_rng(cfg.seed)
        blocks = _init_blocks(dataset, _atom_counts(cfg, self.C), rng)
        self.D = np.hstack(blocks)
        self.atom_class = np.concatenate([np.full(b.shape[1], c + 1) for c, b in enumerate(blocks)])
        self.rows = [np.flatnonzero(self.atom_class == c) for c in range(1, self.C + 1)]
        self.A = code_signals(self.D, self.X, comp.l1, self.opts)[0]

    def _fidelity(self, c, Ac) -> float:
        Xc = self.X[:, self.cols[c]]
        R = Xc - self.D @ Ac
        f = np.sum(R * R)
        if self.discriminative:
            own = self.rows[c]
            Rc = Xc - self.D[:, own] @ Ac[own]
            f += np.sum(Rc * Rc)
            for j in range(self.C):
                if j != c:
                    P = self.D[:, self.rows[j]] @ Ac[self.rows[j]]
                    f += np.sum(P * P)
        return float(f)

    def _fidelity_grad(self, c, Ac) -> np.ndarray:
        Xc = self.X[:, self.cols[c]]
        D = self.D
        G = -2.0 * D.T @ (Xc - D @ Ac)
        if self.discriminative:
            own = self.rows[c]
            G[own] -= 2.0 * D[:, own].T @ (Xc - D[:, own] @ Ac[own])
            for j in range(self.C):
                if j != c:
                    r = self.rows[j]
                    G[r] += 2.0 * D[:, r].T @ (D[:, r] @ Ac[r])
        return G

    def _fisher(self, A):
        if self.fisher_weight == 0:
            return 0.0, np.zeros_like(A)
        v, g = fisher_term(A, self.labels, self.comp.elastic, self.C)
        return self.fisher_weight * v, self.fisher_weight * g

    def objective(self, _=None) -> float:
        f = sum(self._fidelity(c, self.A[:, self.cols[c]]) for c in range(self.C))
        f += self._fisher(self.A)[0] + self.comp.l1 * np.abs(self.A).sum()
        return float(f)

    def update_codes(self, _=None):
        K = self.D.shape[1]
        lip_D = power_iteration(self.D.T @ self.D)
        if self.discriminative:
            blocks = [power_iteration(self.D[:, r].T @ self.D[:, r]) for r in self.rows]
            lip_blocks = max(blocks)
        for c in range(self.C):
            idx = self.cols[c]
            n = idx.size
            L = 2.0 * lip_D + 2.0 * self.fisher_weight * (1.0 + self.comp.elastic)
            if self.discriminative:
                L += 2.0 * blocks[c] + 2.0 * lip_blocks

            def smooth(z, _cols, c=c, idx=idx, n=n):
                Ac = z.reshape(K, n)
                A = self.A.copy()
                A[:, idx] = Ac
                fv, fg = self._fisher(A)
                val = self._fidelity(c, Ac) + fv
                grad = self._fidelity_grad(c, Ac) + fg[:, idx]
                return np.array([val]), grad.reshape(-1, 1)

            z, _ = proximal_gradient(
                smooth,
                self.comp.l1,
                self.A[:, idx].reshape(-1, 1),
                L,
                max_iter=self.opts.max_iterations,
                tol=self.opts.kkt_tolerance,
            )
            self.A[:, idx] = z.reshape(K, n)

    def update_dictionary(self, _=None):
        """Exact atom-wise sweep; every atom sees an isotropic quadratic."""
        X, A, D = self.X, self.A, self.D
        Z = [D[:, r] @ A[r] for r in self.rows]  # per-class contributions D_i A^i
        E = X - sum(Z)
        dead = []
        for k in range(D.shape[1]):
            i = self.atom_class[k] - 1
            r_k = A[k]
            alpha = r_k @ r_k
            b = E @ r_k + D[:, k] * alpha
            if self.discriminative:
                own = self.cols[i]
                other = np.setdiff1d(np.arange(X.shape[1]), own, assume_unique=True)
                s_k, t_k = r_k[own], r_k[other]
                ss, tt = s_k @ s_k, t_k @ t_k
                b = b + (X[:, own] - Z[i][:, own]) @ s_k + D[:, k] * ss
                b = b - (Z[i][:, other] @ t_k - D[:, k] * tt)
                alpha = alpha + ss + tt
            if alpha == 0.0:
                dead.append(k)
                continue
            target = b / alpha
            nrm = np.linalg.norm(target)
            new = target / nrm if nrm > 1.0 else target
            delta = np.outer(new - D[:, k], r_k)
            Z[i] += delta
            E -= delta
            D[:, k] = new
        for k in dead:
            # zero coefficient row: the objective does not depend on this atom
            c = self.atom_class[k] - 1
            Rc = E[:, self.cols[c]]
            j = self.cols[c][int(np.argmax(np.einsum("ij,ij->j", Rc, Rc)))]
            nrm = np.linalg.norm(X[:, j])
            if nrm > 0:
                D[:, k] = X[:, j] / nrm
        self.D = D

    def blocks(self):
        return [Block("codes", self.update_codes), Block("dictionary", self.update_dictionary)]

    def finish(self, dataset):
        return Dictionary(self.D, self.atom_class), {}, self.A


# ---------------------------------------------------------------------------
# drivers


def _problem_for(dataset, comp: Composite, cfg: MethodConfig, atom_class=None, y=None):
    disc = comp.active_discrimination
    if comp.incoherence > 0 and comp.fidelity != "class_partitioned":
        raise ConfigError("the incoherence term needs the class-partitioned fidelity")
    if comp.fidelity == "class_partitioned":
        if disc != "none":
            raise ConfigError(
                f"class-partitioned fidelity cannot be combined with a {disc!r} term (use eta=0)"
            )
        return _ClassPartitioned(dataset, comp, cfg)
    if comp.fidelity == "discriminative":
        if disc not in ("none", "fisher"):
            raise ConfigError(f"discriminative fidelity cannot be combined with a {disc!r} term")
        return _Fisher(dataset, comp, cfg)
    if disc == "fisher":
        return _Fisher(dataset, comp, cfg)
    if disc == "logistic":
        if y is None:
            raise ConfigError("logistic discrimination needs binary targets")
        return _Logistic(dataset, y, comp, cfg)
    return _Stacked(dataset, comp, cfg, atom_class)


def _run(dataset, cfg: MethodConfig, comp: Composite, method: str, atom_class=None, y=None) -> TrainedModel:
    _check_classes(dataset)
    problem = _problem_for(dataset, comp, cfg, atom_class=atom_class, y=y)
    _, trace = alternate_minimize(
        problem.objective, None, problem.blocks(), max_outer=cfg.max_outer, tol=cfg.tol
    )
    D, params, codes = problem.finish(dataset)
    model = TrainedModel(method, D, cfg, trace, dataset.n_classes, params, codes=codes)
    if comp.decision_rule == "logistic" and "theta" not in params:
        # the logistic term was weighted out; fit the classifier on the final codes
        _attach_posthoc_logistic(model, dataset, y, comp)
    return model


def _attach_posthoc_logistic(model, dataset, y, comp):
    bilinear = comp.classifier == "bilinear"
    A = model.codes
    Phi = _logistic_features(dataset.signals, A, bilinear)
    shape = (dataset.n_features, A.shape[0]) if bilinear else (A.shape[0],)
    theta, b = fit_logistic(Phi, np.asarray(y, float), max(comp.reg_w, RIDGE), np.zeros(shape), 0.0)
    model.params = {"theta": theta, "b": np.array([b])}


def train_metaface(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """One l1 dictionary per class; the concatenation is the model dictionary."""
    cfg = dataclasses.replace(cfg, method="metaface").resolve(dataset)
    return _run(dataset, cfg, composite_for(cfg), "metaface")


def train_dlsi(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """Per-class dictionaries with the structured-incoherence penalty ``eta``."""
    cfg = dataclasses.replace(cfg, method="dlsi").resolve(dataset)
    return _run(dataset, cfg, composite_for(cfg), "dlsi")


def detect_common_atoms(model, tau: float = 0.95) -> list[np.ndarray]:
    """Flag atoms that nearly repeat an atom of another class.

    Atom ``k`` of class ``i`` is flagged iff some atom of a different class
    has ``|<d_ik, d_jl>| > tau`` (strict).  Returns one boolean mask per class.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    D = model.dictionary if isinstance(model, TrainedModel) else model
    if not isinstance(D, Dictionary):
        D = Dictionary.from_blocks(D)
    if D.atom_class is None:
        raise ValueError("common-atom detection needs per-class dictionaries")
    G = np.abs(D.atoms.T @ D.atoms)
    cross = D.atom_class[:, None] != D.atom_class[None, :]
    flags = np.any((G > tau) & cross, axis=1)
    return [flags[D.atom_class == c] for c in D.class_ids()]


def _binary_targets(dataset: LabeledDataset, positive: int) -> np.ndarray:
    return np.where(dataset.labels == positive, 1.0, -1.0)


def train_supervised_dl(dataset: LabeledDataset, cfg: MethodConfig, positive_class: int = 1) -> TrainedModel:
    """Binary reconstructive + logistic dictionary learning.

    Class ``positive_class`` maps to ``y = +1`` and the other class to ``-1``.
    """
    present = np.unique(dataset.labels)
    if dataset.n_classes != 2 or present.size != 2:
        raise ValueError(
            "supervised_dl is binary; use train_one_vs_all_supervised for more than two classes"
        )
    return _train_binary_supervised(dataset, cfg, positive_class)


def _train_binary_supervised(dataset, cfg, positive_class):
    cfg = dataclasses.replace(cfg, method="supervised_dl").resolve(dataset)
    y = _binary_targets(dataset, positive_class)
    model = _run(dataset, cfg, composite_for(cfg), "supervised_dl", y=y)
    model.positive_class = positive_class
    return model


def train_one_vs_all_supervised(dataset: LabeledDataset, cfg: MethodConfig) -> list[TrainedModel]:
    """One binary model per class (that class against the rest), all from the same seed."""
    if dataset.n_classes < 2:
        raise ValueError("one-vs-all needs at least two classes")
    return [_train_binary_supervised(dataset, cfg, c) for c in range(1, dataset.n_classes + 1)]


def _combine_traces(traces) -> TrainingTrace:
    T = max(len(t.objective) for t in traces)
    total = np.zeros(T)
    for t in traces:
        f = np.asarray(t.objective)
        total += np.concatenate([f, np.full(T - f.size, f[-1])])
    reason = "converged" if all(t.reason == "converged" for t in traces) else "max_iterations"
    return TrainingTrace(total.tolist(), reason)


def train_supervised_multiclass(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """Wrap the one-vs-all models in a single model that predicts by maximum score."""
    members = train_one_vs_all_supervised(dataset, cfg)
    dictionary = Dictionary.from_blocks([m.dictionary.atoms for m in members])
    return TrainedModel(
        "supervised_dl",
        dictionary,
        members[0].config,
        _combine_traces([m.trace for m in members]),
        dataset.n_classes,
        members=members,
    )


def train_dksvd(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """Reconstruction plus a linear label regression, solved on the stacked data ``[X; sqrt(lambda1) H]``."""
    cfg = dataclasses.replace(cfg, method="dksvd").resolve(dataset)
    return _run(dataset, cfg, composite_for(cfg), "dksvd")


def train_lcksvd(dataset: LabeledDataset, cfg: MethodConfig, atom_class=None) -> TrainedModel:
    """Adds the label-consistency term ``||Q - G A||^2`` to D-KSVD's objective.

    Atoms are assigned to classes in contiguous blocks unless ``atom_class``
    is given.
    """
    cfg = dataclasses.replace(cfg, method="lcksvd").resolve(dataset)
    return _run(dataset, cfg, composite_for(cfg), "lcksvd", atom_class=atom_class)


def train_fddl(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """Discriminative fidelity plus the elastic Fisher criterion on the codes."""
    cfg = dataclasses.replace(cfg, method="fddl").resolve(dataset)
    return _run(dataset, cfg, composite_for(cfg), "fddl")


def train_unified(dataset: LabeledDataset, cfg: MethodConfig, positive_class: int = 1) -> TrainedModel:
    """Train an arbitrary combination of fidelity, discrimination and penalty terms.

    ``eta = 0`` removes the discrimination term (a classifier the decision
    rule still needs is then fitted to the final codes afterwards).
    """
    cfg = dataclasses.replace(cfg, method="unified").resolve(dataset)
    comp = composite_for(cfg)
    if comp.active_discrimination == "label_consistent" and cfg.atoms_per_class is None:
        raise ConfigError("the label-consistency term needs 'atoms_per_class' (an atom-to-class assignment)")
    y = None
    if comp.discrimination == "logistic":
        if dataset.n_classes != 2:
            raise ConfigError("logistic discrimination in the unified trainer is binary")
        y = _binary_targets(dataset, positive_class)
    model = _run(dataset, cfg, comp, "unified", y=y)
    if y is not None:
        model.positive_class = positive_class
    return model


def train(dataset: LabeledDataset, cfg: MethodConfig) -> TrainedModel:
    """Dispatch on ``cfg.method``; supervised_dl is wrapped one-vs-all."""
    m = cfg.method
    if m == "supervised_dl":
        return train_supervised_multiclass(dataset, cfg)
    return {
        "metaface": train_metaface,
        "dlsi": train_dlsi,
        "dksvd": train_dksvd,
        "lcksvd": train_lcksvd,
        "fddl": train_fddl,
        "unified": train_unified,
    }[m](dataset, cfg)
