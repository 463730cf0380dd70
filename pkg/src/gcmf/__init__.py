"""Collective matrix factorization with per-entity-set ARD priors, fitted by variational Bayes."""

from .model import Hyperparams, ModelState, ModelVariant, activity_report, init, load_checkpoint, predict, predict_mean, save_checkpoint
from .schema import Likelihood, Schema, cycle_schema, multiview_schema, validate
from .store import ObservedMatrix, holdout_split, kfold_split, load_triplets
from .vb import elbo, fit
from .map import cv_map, fit_map

__version__ = "0.1.0"

__all__ = [
    "Hyperparams", "Likelihood", "ModelState", "ModelVariant", "ObservedMatrix", "Schema",
    "activity_report", "cv_map", "cycle_schema", "elbo", "fit", "fit_map", "holdout_split", "init",
    "kfold_split", "load_checkpoint", "load_triplets", "multiview_schema", "predict", "predict_mean",
    "save_checkpoint", "validate",
]
