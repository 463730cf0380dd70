import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gcmf.model import Hyperparams, ModelVariant, init  # noqa: E402
from gcmf.schema import Schema  # noqa: E402
from gcmf.store import ObservedMatrix  # noqa: E402


def random_data(schema: Schema, density: float, rng: np.random.Generator) -> dict:
    """Random observations for every relation, drawn to match its likelihood."""
    data = {}
    for rel in schema.relations:
        shape = (schema.size(rel.row), schema.size(rel.col))
        mask = rng.random(shape) < density
        if rel.likelihood.value == "bernoulli":
            values = (rng.random(shape) < 0.5).astype(float)
        elif rel.likelihood.value == "count":
            values = rng.poisson(2.0, shape).astype(float)
        else:
            values = rng.standard_normal(shape)
        data[rel.id] = ObservedMatrix.from_dense(rel.id, values, mask)
    return data


def randomize_state(state, rng: np.random.Generator):
    """Scatter every posterior quantity away from its initial value."""
    for e in state.factors.mean:
        shape = state.factors.mean[e].shape
        state.factors.mean[e][:] = rng.standard_normal(shape)
        state.factors.var[e][:] = rng.uniform(0.05, 0.5, shape)
        state.ard.shape[e] = rng.uniform(1.0, 5.0, shape[1])
        state.ard.rate[e] = rng.uniform(1.0, 5.0, shape[1])
    for m, b in state.bias.items():
        b.row_mean[:] = rng.normal(0, 0.5, b.row_mean.shape)
        b.col_mean[:] = rng.normal(0, 0.5, b.col_mean.shape)
        b.row_var[:] = rng.uniform(0.05, 0.3, b.row_var.shape)
        b.col_var[:] = rng.uniform(0.05, 0.3, b.col_var.shape)
        state.noise.shape[m] = rng.uniform(1.0, 4.0)
        state.noise.rate[m] = rng.uniform(1.0, 4.0)
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_set_schema():
    return Schema.build([6, 5], [(1, 2, "gaussian")], 3)


@pytest.fixture
def cycle3_schema():
    return Schema.build([5, 4, 6], [(1, 2), (2, 3), (3, 1)], 2)


@pytest.fixture
def default_state(cycle3_schema):
    return init(cycle3_schema, Hyperparams(), ModelVariant(), seed=0)
