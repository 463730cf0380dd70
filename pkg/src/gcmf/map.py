"""MAP estimation and the grid cross-validation it needs for its priors.

The MAP sweep mirrors the variational one with every variance pinned at zero
and each Gamma posterior replaced by its mode. The objective tracked for
convergence is the log posterior (with the same quadratic majorizer for
non-Gaussian relations).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .experiments.metrics import pooled_rmse
from .model import Hyperparams, ModelState, ModelVariant
from .schema import Likelihood, Schema
from .store import kfold_split
from .vb import LOG2PI, SIGMA2_FLOOR, Engine, FitError, fit

MODE_FLOOR = 1e-12


def _gamma_log_prior(a0, b0, x):
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * np.log(x) - b0 * x


class MapEngine(Engine):
    """Point-estimate sweep: zero variances, Gamma modes for the precisions."""

    def update_bias(self, m: int) -> None:
        s = self.state
        if not s.variant.bias:
            return
        rel = self.rels[m]
        b = s.bias[m]
        tau = s.tau(m)
        resid_sum = rel.R @ np.ones(rel.R.shape[1])
        mean = self._bias_mode(tau, rel.row_counts, resid_sum + rel.row_counts * b.row_mean, b.mu_row, b.s2_row)
        rel.resid[:] -= (mean - b.row_mean)[rel.rows]
        b.row_mean = mean
        resid_sum = rel.R.T @ np.ones(rel.R.shape[0])
        mean = self._bias_mode(tau, rel.col_counts, resid_sum + rel.col_counts * b.col_mean, b.mu_col, b.s2_col)
        rel.resid[:] -= (mean - b.col_mean)[rel.cols]
        b.col_mean = mean
        b.mu_row = self._hyper_mean(b.row_mean, b.s2_row)[0]
        b.mu_col = self._hyper_mean(b.col_mean, b.s2_col)[0]
        b.s2_row = self._map_scale(b.row_mean, b.mu_row)
        b.s2_col = self._map_scale(b.col_mean, b.mu_col)
        self._reset_empty(b, rel)

    @staticmethod
    def _bias_mode(tau, counts, resid_sum, mu, s2):
        return (tau * resid_sum + mu / s2) / (tau * counts + 1.0 / s2)

    @staticmethod
    def _map_scale(means, mu):
        if means.size == 0:
            return 1.0
        return max(float(np.mean((means - mu) ** 2)), SIGMA2_FLOOR)

    def update_ard(self, e: int | None = None) -> None:
        """alpha = (a0 + d/2 - 1) / (b0 + sum u^2 / 2), floored at 1e-12.

        Stored as shape/rate so that ``ard.mean`` returns the mode.
        """
        s = self.state
        a0, b0 = s.hyper.a0, s.hyper.b0
        if s.variant.tied:
            ids = s.schema.set_ids()
            sq = sum(np.sum(s.factors.mean[x] ** 2, axis=0) for x in ids)
            rate = b0 + 0.5 * sq
            shape = np.maximum(a0 + 0.5 * sum(s.schema.size(x) for x in ids) - 1.0, MODE_FLOOR * rate)
            for x in ids:
                s.ard.shape[x] = shape.copy()
                s.ard.rate[x] = rate.copy()
            return
        for x in [e] if e is not None else s.schema.set_ids():
            U = s.factors.mean[x]
            rate = b0 + 0.5 * np.sum(U * U, axis=0)
            s.ard.shape[x] = np.maximum(a0 + 0.5 * U.shape[0] - 1.0, MODE_FLOOR * rate)
            s.ard.rate[x] = rate

    def update_tau(self, m: int) -> None:
        r = self.rels[m]
        if r.lik is not Likelihood.GAUSSIAN:
            raise ValueError(f"relation {m} is {r.lik.value}; tau is only learned for Gaussian relations")
        s = self.state
        rate = s.hyper.q0 + 0.5 * float(r.resid @ r.resid)
        s.noise.rate[m] = rate
        s.noise.shape[m] = max(s.hyper.p0 + 0.5 * r.n - 1.0, MODE_FLOOR * rate)

    def objective_terms(self) -> dict[str, float]:
        """Log posterior, up to the normalizer, split by term."""
        s = self.state
        h = s.hyper
        terms: dict[str, float] = {}
        for m, r in self.rels.items():
            sq = float(r.resid @ r.resid)
            if r.lik is Likelihood.GAUSSIAN:
                tau = s.tau(m)
                terms[f"lik[{m}]"] = 0.5 * r.n * (np.log(tau) - LOG2PI) - 0.5 * tau * sq
                terms[f"tau[{m}]"] = float(_gamma_log_prior(h.p0, h.q0, tau))
            else:
                terms[f"lik[{m}]"] = self._surrogate_loglik(m, sq)
        for e in s.schema.set_ids():
            U = s.factors.mean[e]
            alpha = s.ard.mean(e)
            d = U.shape[0]
            terms[f"U[{e}]"] = float(np.sum(0.5 * d * (np.log(alpha) - LOG2PI) - 0.5 * alpha * np.sum(U * U, axis=0)))
            if not s.variant.tied:
                terms[f"alpha[{e}]"] = float(np.sum(_gamma_log_prior(h.a0, h.b0, alpha)))
        if s.variant.tied and s.schema.n_sets:
            alpha = s.ard.mean(s.schema.set_ids()[0])
            terms["alpha"] = float(np.sum(_gamma_log_prior(h.a0, h.b0, alpha)))
        if s.variant.bias:
            for m, b in s.bias.items():
                terms[f"bias[{m}]"] = _bias_logpdf(b.row_mean, b.mu_row, b.s2_row) + _bias_logpdf(
                    b.col_mean, b.mu_col, b.s2_col)
        return terms


def _bias_logpdf(means, mu, s2):
    d = means.size
    value = -0.5 * d * (LOG2PI + np.log(s2)) - float(np.sum((means - mu) ** 2)) / (2.0 * s2)
    return float(value - 0.5 * LOG2PI - 0.5 * mu * mu)


def fit_map(schema: Schema, data, hyper: Hyperparams | None = None, variant: ModelVariant | None = None,
            seed: int = 0, **kwargs):
    """MAP counterpart of :func:`gcmf.vb.fit`; same signature and return value."""
    variant = replace(variant or ModelVariant(), map=True)
    return fit(schema, data, hyper, variant, seed, **kwargs)


def log_grid(lo: float = 1e-6, hi: float = 1e4, n: int = 11) -> list[float]:
    return np.logspace(np.log10(lo), np.log10(hi), n).tolist()


@dataclass(frozen=True)
class MapConfig:
    """Grid over the tied prior strengths a0=b0 and p0=q0.

    ``max_iters`` caps the sweeps of every MAP fit made for the grid. Under
    ARD a pruned factor keeps trading a smaller norm for a larger precision,
    which only stops near alpha = (a0 + d/2 - 1) / b0; with small b0 the fits
    creep for thousands of sweeps, so they get a budget instead. The selected
    hyperparameters carry the same budget.
    """

    ard_grid: tuple[float, ...] = field(default_factory=lambda: tuple(log_grid()))
    noise_grid: tuple[float, ...] = field(default_factory=lambda: tuple(log_grid()))
    folds: int = 2
    seed: int = 0
    max_iters: int = 100

    def __post_init__(self):
        if not self.ard_grid or not self.noise_grid:
            raise ValueError("grids must be non-empty")
        if any(v <= 0 for v in (*self.ard_grid, *self.noise_grid)):
            raise ValueError("grid values must be positive")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class CvCell:
    a0b0: float
    p0q0: float
    fold: int
    val_rmse: float
    error: str | None = None


@dataclass
class CvResult:
    best: Hyperparams
    table: list[CvCell]
    n_fits: int

    def mean_rmse(self) -> dict[tuple[float, float], float]:
        sums: dict[tuple[float, float], list[float]] = {}
        for cell in self.table:
            sums.setdefault((cell.a0b0, cell.p0q0), []).append(cell.val_rmse)
        return {k: float(np.mean(v)) for k, v in sums.items()}


def cv_map(schema: Schema, data, config: MapConfig | None = None, variant: ModelVariant | None = None,
           base: Hyperparams | None = None) -> CvResult:
    """Pick a0=b0 and p0=q0 by k-fold cross-validation of the MAP fit.

    Every relation is split into folds independently; a fit that fails is
    recorded with an infinite validation error rather than aborting the grid.
    """
    config = config or MapConfig()
    base = base or Hyperparams()
    variant = replace(variant or ModelVariant(), map=True)
    per_rel = {m: kfold_split(mat, config.folds, config.seed) for m, mat in data.items()}
    table: list[CvCell] = []
    n_fits = 0
    for a in config.ard_grid:
        for p in config.noise_grid:
            hyper = replace(base, a0=a, b0=a, p0=p, q0=p, max_iters=config.max_iters)
            for f in range(config.folds):
                train = {m: pairs[f][0] for m, pairs in per_rel.items()}
                valid = {m: pairs[f][1] for m, pairs in per_rel.items()}
                n_fits += 1
                try:
                    state, _ = fit(schema, train, hyper, variant, config.seed)
                    score = pooled_rmse(state, valid)
                    table.append(CvCell(a, p, f, score))
                except (FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    table.append(CvCell(a, p, f, float("inf"), str(exc)))
    means = CvResult(base, table, n_fits).mean_rmse()
    # ties resolve to the first grid point in scan order
    best_key = min(means, key=lambda k: (means[k], config.ard_grid.index(k[0]), config.noise_grid.index(k[1])))
    best = replace(base, a0=best_key[0], b0=best_key[0], p0=best_key[1], q0=best_key[1],
                   max_iters=config.max_iters)
    return CvResult(best, table, n_fits)


def write_cv_table(result: CvResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a0b0", "p0q0", "fold", "val_rmse"])
        for cell in result.table:
            w.writerow([repr(cell.a0b0), repr(cell.p0q0), cell.fold, repr(cell.val_rmse)])
