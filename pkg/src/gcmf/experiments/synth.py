"""Synthetic data with planted shared/private factor structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..schema import Likelihood, Schema, cycle_schema
from ..store import ObservedMatrix
from ..util import rng_for


@dataclass(frozen=True)
class CircularSynthSpec:
    """Matrices forming a cycle over M entity sets.

    Loadings are standard normal; shared factors are nonzero on every set and
    each private factor only on the two sets of its matrix, giving
    ``n_shared + n_private * M`` true factors.
    """

    M: int = 5
    size_range: tuple[int, int] = (100, 150)
    n_shared: int = 5
    n_private: int = 2
    likelihood: str = "bernoulli"
    noise: float = 0.5
    seed: int = 0
    rank: int | None = None

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid size range {self.size_range}")
        if self.n_shared < 0 or self.n_private < 0:
            raise ValueError("factor counts must be non-negative")
        Likelihood.parse(self.likelihood)
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def true_rank(self) -> int:
        return self.n_shared + self.n_private * self.M

    @property
    def fit_rank(self) -> int:
        return self.rank if self.rank is not None else 10 + 2 * self.M


@dataclass
class GroundTruth:
    factors: dict[int, np.ndarray]
    pattern: np.ndarray  # (E, T) bool: which sets load on which true factor
    linear: dict[int, np.ndarray] = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _sample_values(xi: np.ndarray, likelihood: Likelihood, noise: float, rng) -> np.ndarray:
    if likelihood is Likelihood.GAUSSIAN:
        return xi + noise * rng.standard_normal(xi.shape)
    if likelihood is Likelihood.BERNOULLI:
        return (rng.random(xi.shape) < expit(xi)).astype(float)
    return rng.poisson(np.logaddexp(0.0, xi)).astype(float)


def gen_circular(spec: CircularSynthSpec):
    """Fully observed matrices on a cycle; returns (schema, data, truth)."""
    rng = rng_for(spec.seed, "circular")
    lo, hi = spec.size_range
    M = spec.M
    n_sets = 2 if M == 1 else M
    sizes = rng.integers(lo, hi + 1, size=n_sets).tolist()
    lik = Likelihood.parse(spec.likelihood)
    if M == 1:
        schema = Schema.build(sizes, [(1, 2, lik)], spec.fit_rank)
    else:
        schema = cycle_schema(sizes, spec.fit_rank, lik.value)

    T = spec.true_rank
    pattern = np.zeros((n_sets, T), bool)
    pattern[:, : spec.n_shared] = True
    labels = ["shared"] * spec.n_shared
    for rel in schema.relations:
        start = spec.n_shared + (rel.id - 1) * spec.n_private
        pattern[[rel.row - 1, rel.col - 1], start:start + spec.n_private] = True
        labels += [f"private{rel.id}"] * spec.n_private
    factors = {
        e: rng.standard_normal((sizes[e - 1], T)) * pattern[e - 1] for e in range(1, n_sets + 1)
    }
    data, linear = {}, {}
    for rel in schema.relations:
        xi = factors[rel.row] @ factors[rel.col].T
        linear[rel.id] = xi
        values = _sample_values(xi, lik, spec.noise, rng)
        data[rel.id] = ObservedMatrix.from_dense(rel.id, values)
    return schema, data, GroundTruth(factors, pattern, linear, labels)


@dataclass(frozen=True)
class ProximitySpec:
    """Binary proximity between two column sets from their latent locations.

    ``kernel`` is ``exponential`` (p = exp(-|l_i - l_j| / width)) or
    ``gaussian`` (p = exp(-(l_i - l_j)^2 / (2 width^2))).
    """

    width: float = 1.0
    kernel: str = "exponential"
    locations: tuple[np.ndarray, np.ndarray] | None = None
    span: float = 10.0
    observed: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in ("exponential", "gaussian"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if not self.width > 0:
            raise ValueError("kernel width must be positive")
        if not 0 < self.observed <= 1:
            raise ValueError("observed fraction must lie in (0, 1]")


def proximity_probability(loc_a: np.ndarray, loc_b: np.ndarray, spec: ProximitySpec) -> np.ndarray:
    dist = np.abs(np.subtract.outer(np.asarray(loc_a, float), np.asarray(loc_b, float)))
    if spec.kernel == "exponential":
        return np.exp(-dist / spec.width)
    return np.exp(-0.5 * (dist / spec.width) ** 2)


def smooth_loadings(locations: np.ndarray, coefs: np.ndarray, span: float) -> np.ndarray:
    """Loadings that vary smoothly with location: low-frequency Fourier series.

    ``coefs`` has shape (n_factors, n_freq, 2) holding cosine/sine weights.
    """
    n_freq = coefs.shape[1]
    freq = np.arange(1, n_freq + 1)
    phase = 2.0 * np.pi * np.outer(locations, freq) / span
    basis = np.stack([np.cos(phase), np.sin(phase)], axis=-1)  # (d, F, 2)
    return np.einsum("dfc,kfc->dk", basis, coefs) / np.sqrt(n_freq)


def gen_augmented_multiview(
    n: int,
    d1: int,
    d2: int,
    proximity: ProximitySpec,
    seed: int = 0,
    n_shared: int = 3,
    n_private: int = 2,
    n_freq: int = 3,
    noise: float = 0.5,
    rank: int = 12,
):
    """Two Gaussian views of the same rows plus a binary proximity matrix between their columns.

    Shared factors load on features through smooth functions of location that
    are identical across the two views, so nearby features of the two views
    behave alike; private factors have unstructured loadings. Returns
    (schema, data, truth) where relation 3 is the proximity matrix.
    """
    if min(n, d1, d2) < 1:
        raise ValueError("sizes must be >= 1")
    rng = rng_for(seed, "multiview")
    if proximity.locations is not None:
        loc1, loc2 = (np.asarray(x, float) for x in proximity.locations)
        if loc1.size != d1 or loc2.size != d2:
            raise ValueError("locations must match d1 and d2")
    else:
        loc1 = np.sort(rng.uniform(0, proximity.span, d1))
        loc2 = np.sort(rng.uniform(0, proximity.span, d2))
    coefs = rng.standard_normal((n_shared, n_freq, 2))
    W1 = np.hstack([smooth_loadings(loc1, coefs, proximity.span), rng.standard_normal((d1, n_private)),
                    np.zeros((d1, n_private))])
    W2 = np.hstack([smooth_loadings(loc2, coefs, proximity.span), np.zeros((d2, n_private)),
                    rng.standard_normal((d2, n_private))])
    Z = rng.standard_normal((n, n_shared + 2 * n_private))
    X1 = Z @ W1.T + noise * rng.standard_normal((n, d1))
    X2 = Z @ W2.T + noise * rng.standard_normal((n, d2))

    # the proximity draw uses its own stream so sweeping the width keeps the views fixed
    prng = rng_for(seed, "proximity", proximity.kernel, repr(proximity.width))
    prob = proximity_probability(loc1, loc2, proximity)
    X3 = (prng.random(prob.shape) < prob).astype(float)
    mask3 = prng.random(prob.shape) < proximity.observed if proximity.observed < 1 else None

    schema = Schema.build(
        [n, d1, d2], [(1, 2, "gaussian"), (1, 3, "gaussian"), (2, 3, "bernoulli")], rank,
        names=["rows", "view1_features", "view2_features"],
    )
    data = {
        1: ObservedMatrix.from_dense(1, X1),
        2: ObservedMatrix.from_dense(2, X2),
        3: ObservedMatrix.from_dense(3, X3, mask3),
    }
    pattern = np.array([[True] * W1.shape[1],
                        [True] * n_shared + [True] * n_private + [False] * n_private,
                        [True] * n_shared + [False] * n_private + [True] * n_private])
    truth = GroundTruth({1: Z, 2: W1, 3: W2}, pattern, {1: Z @ W1.T, 2: Z @ W2.T},
                        ["shared"] * n_shared + ["view1"] * n_private + ["view2"] * n_private,
                        {"locations": (loc1, loc2), "proximity": prob})
    return schema, data, truth


def gen_bias_only(
    sizes: Sequence[int] = (60, 40),
    mu: tuple[float, float] = (2.0, -1.0),
    scale: tuple[float, float] = (1.0, 1.0),
    noise: float = 0.3,
    seed: int = 0,
    rank: int = 3,
):
    """One Gaussian matrix made of row and column biases plus noise."""
    rng = rng_for(seed, "bias-only")
    d_r, d_c = sizes
    row_b = mu[0] + scale[0] * rng.standard_normal(d_r)
    col_b = mu[1] + scale[1] * rng.standard_normal(d_c)
    X = row_b[:, None] + col_b[None, :] + noise * rng.standard_normal((d_r, d_c))
    schema = Schema.build([d_r, d_c], [(1, 2, "gaussian")], rank)
    truth = GroundTruth({}, np.zeros((2, 0), bool), {1: row_b[:, None] + col_b[None, :]},
                        extra={"row_bias": row_b, "col_bias": col_b})
    return schema, {1: ObservedMatrix.from_dense(1, X)}, truth
