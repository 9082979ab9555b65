"""Discriminative dictionary learning for classification."""

from .classify import (
    classify_linear,
    classify_model,
    classify_residual,
    classify_src,
    evaluate,
    predict,
)
from .data_io import LabeledDataset, SynthSpec, load_csv, save_csv, split, synth_planted
from .dict_optimize import Dictionary, TrainingTrace, update_dictionary_incoherent, update_dictionary_ls
from .model_io import load_model, save_model
from .sparse_coding import ConvergenceError, SolverOptions, SparseCodeProblem, batch_sparse_code, lasso_solve
from .trainers import (
    ConfigError,
    MethodConfig,
    TrainedModel,
    detect_common_atoms,
    train,
    train_dksvd,
    train_dlsi,
    train_fddl,
    train_lcksvd,
    train_metaface,
    train_one_vs_all_supervised,
    train_supervised_dl,
    train_unified,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "Dictionary",
    "LabeledDataset",
    "MethodConfig",
    "SolverOptions",
    "SparseCodeProblem",
    "SynthSpec",
    "TrainedModel",
    "TrainingTrace",
    "batch_sparse_code",
    "classify_linear",
    "classify_model",
    "classify_residual",
    "classify_src",
    "detect_common_atoms",
    "evaluate",
    "lasso_solve",
    "load_csv",
    "load_model",
    "predict",
    "save_csv",
    "save_model",
    "split",
    "synth_planted",
    "train",
    "train_dksvd",
    "train_dlsi",
    "train_fddl",
    "train_lcksvd",
    "train_metaface",
    "train_one_vs_all_supervised",
    "train_supervised_dl",
    "train_unified",
    "update_dictionary_incoherent",
    "update_dictionary_ls",
]
