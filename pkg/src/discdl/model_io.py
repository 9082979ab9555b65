"""Plain-text model files and key=value run configs.

A model file is line oriented::

    discdl-model 1
    method dksvd
    n_classes 4
    shape 32 24
    config atoms_per_class 6
    ...
    atom_class 1 1 1 2 2 2 ...
    matrix dictionary 32 24
    <32 rows of 24 values>
    matrix W 4 24
    ...
    member            (one-vs-all sub-models, each a nested model body)
    ...
    end member

Values are written with ``repr`` so every double round-trips exactly.
"""

from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np

from .dict_optimize import Dictionary, TrainingTrace
from .trainers import ConfigError, MethodConfig, TrainedModel

FORMAT = "discdl-model"
VERSION = 1
_INT_KEYS = {"atoms_per_class", "n_atoms", "seed", "max_outer", "inner_max_iter"}
_STR_KEYS = {"method", "classifier", "fidelity", "discrimination"}


class ModelFormatError(ValueError):
    pass


def _fmt(v) -> str:
    return repr(float(v))


def coerce_value(key: str, text: str):
    """Parse a config value for ``key`` from text; ``none`` means unset."""
    names = {f.name for f in dataclasses.fields(MethodConfig)}
    if key not in names:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    if key in _STR_KEYS:
        return text
    if text.lower() == "none":
        return None
    try:
        return int(text) if key in _INT_KEYS else float(text)
    except ValueError:
        kind = "an integer" if key in _INT_KEYS else "a number"
        raise ConfigError(f"config key {key!r} expects {kind}, got {text!r}") from None


def read_config(path, method: str, seed: int = 0) -> MethodConfig:
    """Build a :class:`MethodConfig` from a ``key = value`` file (``#`` starts a comment)."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in ("method", "seed"):
                raise ConfigError(f"{path}:{lineno}: {key!r} is set on the command line, not in the config")
            try:
                values[key] = coerce_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return MethodConfig(method=method, seed=seed, **values)


def _write_body(model: TrainedModel, out: list[str]) -> None:
    out.append(f"method {model.method}")
    out.append(f"n_classes {model.n_classes}")
    out.append(f"shape {model.dictionary.n_features} {model.dictionary.n_atoms}")
    for key, value in model.config.to_dict().items():
        out.append(f"config {key} {'none' if value is None else value}")
    if model.positive_class is not None:
        out.append(f"positive_class {model.positive_class}")
    ac = model.dictionary.atom_class
    out.append("atom_class " + ("none" if ac is None else " ".join(str(int(c)) for c in ac)))
    out.append(f"trace_reason {model.trace.reason}")
    mats = {"dictionary": model.dictionary.atoms, "trace": np.asarray(model.trace.objective)[None, :]}
    for name in sorted(model.params):
        mats[name] = np.atleast_2d(model.params[name])
        out.append(f"param_shape {name} {' '.join(str(s) for s in np.shape(model.params[name]))}")
    for name, M in mats.items():
        out.append(f"matrix {name} {M.shape[0]} {M.shape[1]}")
        for row in M:
            out.append(" ".join(_fmt(v) for v in row))
    for member in model.members:
        out.append("member")
        _write_body(member, out)
        out.append("end member")


def dumps(model: TrainedModel) -> str:
    out = [f"{FORMAT} {VERSION}"]
    _write_body(model, out)
    return "\n".join(out) + "\n"


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model))


def _read_body(lines: Iterator[str], nested: bool) -> TrainedModel:
    head: dict = {}
    config: dict = {}
    mats: dict = {}
    shapes: dict = {}
    members = []
    for line in lines:
        if not line.strip():
            continue
        word, _, rest = line.partition(" ")
        if word == "end":
            if not nested:
                raise ModelFormatError("unexpected 'end'")
            break
        if word == "member":
            members.append(_read_body(lines, nested=True))
        elif word == "config":
            key, _, value = rest.partition(" ")
            config[key] = coerce_value(key, value)
        elif word == "matrix":
            name, r, c = rest.split()
            r, c = int(r), int(c)
            rows = [next(lines).split() for _ in range(r)]
            M = np.array([[float(v) for v in row] for row in rows]).reshape(r, c)
            mats[name] = M
        elif word == "param_shape":
            name, *dims = rest.split()
            shapes[name] = tuple(int(d) for d in dims)
        else:
            head[word] = rest
    try:
        atom_class = None if head["atom_class"] == "none" else [int(v) for v in head["atom_class"].split()]
        cfg = MethodConfig(**config)
        trace = TrainingTrace(mats.pop("trace")[0].tolist(), head["trace_reason"])
        dictionary = Dictionary(mats.pop("dictionary"), atom_class)
        if tuple(int(v) for v in head["shape"].split()) != dictionary.atoms.shape:
            raise ValueError("dictionary block does not match the declared shape")
        params = {name: mats[name].reshape(shapes[name]) for name in shapes}
        pc = head.get("positive_class")
        return TrainedModel(
            head["method"],
            dictionary,
            cfg,
            trace,
            int(head["n_classes"]),
            params,
            members,
            None if pc is None else int(pc),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None


def loads(text: str) -> TrainedModel:
    lines = iter(text.splitlines())
    first = next(lines, "").split()
    if len(first) != 2 or first[0] != FORMAT:
        raise ModelFormatError("not a discdl model file")
    if first[1] != str(VERSION):
        raise ModelFormatError(f"unsupported model format version {first[1]} (expected {VERSION})")
    return _read_body(lines, nested=False)


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return loads(fh.read())
