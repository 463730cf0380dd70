"""Error metrics for held-out entries."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..model import ModelState, predict_mean
from ..store import ObservedMatrix


def rmse(predictions, test: ObservedMatrix) -> float:
    """Root mean squared error of predictions aligned with ``test``'s entries.

    Predictions for Bernoulli relations should already be probabilities.
    """
    pred = np.asarray(predictions, dtype=float)
    if test.n_obs == 0:
        raise ValueError("rmse of an empty test set is undefined")
    if pred.shape != test.values.shape:
        raise ValueError(f"expected {test.n_obs} predictions, got {pred.size}")
    return float(np.sqrt(np.mean((pred - test.values) ** 2)))


def relative_error(method_rmse: float, reference_rmse: float) -> float:
    if not reference_rmse > 0:
        raise ValueError("reference error must be positive")
    return float(method_rmse) / float(reference_rmse)


def predictions_for(state: ModelState, test: ObservedMatrix) -> np.ndarray:
    return np.asarray(predict_mean(state, test.relation_id, test.rows, test.cols), dtype=float)


def relation_rmse(state: ModelState, test: Mapping[int, ObservedMatrix]) -> dict[int, float]:
    return {m: rmse(predictions_for(state, mat), mat) for m, mat in test.items() if mat.n_obs}


def pooled_rmse(state: ModelState, test: Mapping[int, ObservedMatrix], relations=None) -> float:
    """RMSE over the union of test entries of the chosen relations (default: all)."""
    chosen = sorted(test) if relations is None else list(relations)
    sq, n = 0.0, 0
    for m in chosen:
        mat = test[m]
        if mat.n_obs == 0:
            continue
        err = predictions_for(state, mat) - mat.values
        sq += float(err @ err)
        n += mat.n_obs
    if n == 0:
        raise ValueError("rmse of an empty test set is undefined")
    return float(np.sqrt(sq / n))
