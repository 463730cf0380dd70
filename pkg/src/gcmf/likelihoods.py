"""Link functions and curvature bounds for the non-Gaussian relations.

Each likelihood is written as a negative log-likelihood ``f(xi; x)`` in the
linear predictor ``xi``. Non-Gaussian relations are fitted through the
quadratic majorizer

    f(xi) <= f(xi0) + f'(xi0) (xi - xi0) + kappa/2 (xi - xi0)^2

which turns them into Gaussian pseudo-observations ``z = xi0 - f'(xi0)/kappa``
with precision ``kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, gammaln

from .schema import Likelihood

XI_CLAMP = 30.0


def softplus(xi):
    return np.logaddexp(0.0, xi)


def _bern_nll(xi, x):
    return softplus(xi) - x * xi


def _bern_grad(xi, x):
    return expit(xi) - x


def _bern_curv(xi, x):
    s = expit(xi)
    return s * (1.0 - s)


def _count_rate(xi):
    return softplus(np.clip(xi, -XI_CLAMP, XI_CLAMP))


def _count_nll(xi, x):
    rate = _count_rate(xi)
    return rate - x * np.log(rate) + gammaln(x + 1.0)


def _count_grad(xi, x):
    xi = np.clip(xi, -XI_CLAMP, XI_CLAMP)
    rate = softplus(xi)
    return expit(xi) * (1.0 - x / rate)


def _count_curv(xi, x):
    xi = np.clip(xi, -XI_CLAMP, XI_CLAMP)
    rate = softplus(xi)
    s = expit(xi)
    return s * (1.0 - s) * (1.0 - x / rate) + x * (s / rate) ** 2


def count_curvature_bound(x_max: float) -> float:
    """Supremum over the clamped range of f'' for the softplus-Poisson link.

    f'' is affine in x, so the worst case over observed counts is attained at
    x = 0 (where the bound is 1/4) or at the largest count.
    """
    if x_max <= 0:
        return 0.25
    grid = np.linspace(-XI_CLAMP, XI_CLAMP, 24001)
    vals = _count_curv(grid, x_max)
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -_count_curv(t, x_max), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    peak = max(float(vals[i]), float(-res.fun))
    # small safety margin for the grid/optimizer error
    return max(0.25, peak * (1.0 + 1e-9))


@dataclass(frozen=True)
class LikelihoodSpec:
    kind: Likelihood
    nll: Callable
    grad: Callable
    curvature: Callable
    mean: Callable

    def kappa(self, values: np.ndarray) -> float:
        """Upper bound on f'' over the admitted predictor range."""
        if self.kind is Likelihood.BERNOULLI:
            return 0.25
        if self.kind is Likelihood.COUNT:
            return count_curvature_bound(float(np.max(values, initial=0.0)))
        raise ValueError("Gaussian relations have no curvature bound; they use tau")

    def pseudo_targets(self, xi: np.ndarray, values: np.ndarray, kappa: float) -> np.ndarray:
        return xi - self.grad(xi, values) / kappa

    def surrogate(self, xi, xi0, values, kappa):
        """Quadratic majorizer of f around xi0, evaluated at xi."""
        d = xi - xi0
        return self.nll(xi0, values) + self.grad(xi0, values) * d + 0.5 * kappa * d * d


def _gauss_nll(xi, x):
    return 0.5 * (x - xi) ** 2


LIKELIHOODS = {
    Likelihood.GAUSSIAN: LikelihoodSpec(
        Likelihood.GAUSSIAN, _gauss_nll, lambda xi, x: xi - x, lambda xi, x: np.ones_like(xi),
        lambda xi: xi,
    ),
    Likelihood.BERNOULLI: LikelihoodSpec(
        Likelihood.BERNOULLI, _bern_nll, _bern_grad, _bern_curv, expit,
    ),
    Likelihood.COUNT: LikelihoodSpec(
        Likelihood.COUNT, _count_nll, _count_grad, _count_curv, _count_rate,
    ),
}


def spec_for(kind: Likelihood | str) -> LikelihoodSpec:
    return LIKELIHOODS[Likelihood.parse(kind)]
