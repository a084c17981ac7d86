"""Facial-expression recognition toolkit: numpy CNN engine, FER2013 data
pipeline, training, evaluation, interpretability, CLI, and HTTP service."""

from .augment import AugmentPolicy, apply_policy, tta_set
from .data import (EMOTION_NAMES, Dataset, Sample, class_weights,
                   emotion_index, emotion_name, load_class_directories,
                   load_fer_csv, merge, stratified_split)
from .errors import (BadMagicError, DataError, FerError, NumericError,
                     ShapeMismatchError, TruncatedWeightsError,
                     WeightsFormatError)
from .evaluate import (EnsembleSpec, accuracy, confusion_matrix,
                       ensemble_predict, error_report, predict_tta, soft_vote)
from .interpret import occlusion_map, render_heatmap, saliency_map
from .model import Model, build_model, load_weights, save_weights
from .train import TrainConfig, TrainState, fit, lr_schedule_step, sgd_step

__all__ = [
    "AugmentPolicy",
    "apply_policy",
    "tta_set",
    "EMOTION_NAMES",
    "Dataset",
    "Sample",
    "class_weights",
    "emotion_index",
    "emotion_name",
    "load_class_directories",
    "load_fer_csv",
    "merge",
    "stratified_split",
    "BadMagicError",
    "DataError",
    "FerError",
    "NumericError",
    "ShapeMismatchError",
    "TruncatedWeightsError",
    "WeightsFormatError",
    "EnsembleSpec",
    "accuracy",
    "confusion_matrix",
    "ensemble_predict",
    "error_report",
    "predict_tta",
    "soft_vote",
    "occlusion_map",
    "render_heatmap",
    "saliency_map",
    "Model",
    "build_model",
    "load_weights",
    "save_weights",
    "TrainConfig",
    "TrainState",
    "fit",
    "lr_schedule_step",
    "sgd_step",
]

__version__ = "0.1.0"
