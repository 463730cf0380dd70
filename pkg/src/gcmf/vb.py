"""Variational Bayesian inference for collective matrix factorization with per-set ARD.

One sweep runs, in order:

1. per entity set, closed-form factor variances and gradients of the means,
2. under-relaxed Newton steps on the means, one factor column at a time,
   followed by a joint rotation of factor pairs (``Hyperparams.rotate``),
3. row/column biases and their hierarchical hyperparameters,
4. ARD precisions (skipped during the first ``ard_warmup`` sweeps),
5. noise precisions for Gaussian relations, pseudo-data for the others.

Every sum runs over observed entries only. Each relation keeps a residual
vector ``target - xi`` aligned with its (row-major sorted) entries; the
residual buffer doubles as the data array of a CSR matrix so that row and
column sums are sparse mat-vecs, keeping a sweep at O(nnz * K).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.special import digamma, gammaln

from .likelihoods import spec_for
from .model import Hyperparams, ModelState, ModelVariant, PseudoData, init
from .schema import Likelihood, Schema, require_valid
from .store import ObservedMatrix, as_data

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
SIGMA2_FLOOR = 1e-8


class FitError(RuntimeError):
    pass


class DivergenceError(FitError):
    pass


@dataclass
class TraceRecord:
    iteration: int
    elbo: float
    rmse: dict[int, float]
    max_delta: float


@dataclass
class _Block:
    """Observed entries of one relation seen from one of its entity sets."""

    m: int
    other: int
    counts: np.ndarray
    indicator: sp.spmatrix
    resid: sp.spmatrix
    own_idx: np.ndarray
    other_idx: np.ndarray


@dataclass
class _Rel:
    m: int
    row: int
    col: int
    lik: Likelihood
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    target: np.ndarray
    indicator: sp.csr_matrix
    R: sp.csr_matrix
    row_counts: np.ndarray
    col_counts: np.ndarray
    blocks: dict = field(default_factory=dict)

    @property
    def resid(self) -> np.ndarray:
        return self.R.data

    @property
    def n(self) -> int:
        return self.rows.size


def _gamma_expect(shape, rate):
    """(E[x], E[log x]) under Gamma(shape, rate)."""
    return shape / rate, digamma(shape) - np.log(rate)


def _gamma_prior_term(a0, b0, mean, log_mean):
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * log_mean - b0 * mean


def _gamma_entropy(shape, rate):
    return shape - np.log(rate) + gammaln(shape) + (1.0 - shape) * digamma(shape)


class Engine:
    """Owns a model state plus the residual workspace for one dataset."""

    def __init__(self, state: ModelState, data: Mapping[int, ObservedMatrix]):
        self.state = state
        self.schema = state.schema
        self.data = as_data(data, self.schema)
        self.rels: dict[int, _Rel] = {}
        self.by_set: dict[int, list] = {e: [] for e in self.schema.set_ids()}
        for rel in self.schema.relations:
            self._add_relation(rel)
        self.refresh()

    # -- workspace -------------------------------------------------------

    def _add_relation(self, rel):
        mat = self.data[rel.id]
        d_r, d_c = mat.shape
        indptr = np.zeros(d_r + 1, dtype=np.int64)
        np.cumsum(np.bincount(mat.rows, minlength=d_r), out=indptr[1:])
        indicator = sp.csr_matrix((np.ones(mat.n_obs), mat.cols, indptr), shape=(d_r, d_c))
        R = sp.csr_matrix((np.zeros(mat.n_obs), mat.cols, indptr), shape=(d_r, d_c))
        row_counts = np.bincount(mat.rows, minlength=d_r).astype(float)
        col_counts = np.bincount(mat.cols, minlength=d_c).astype(float)
        info = _Rel(rel.id, rel.row, rel.col, rel.likelihood, mat.rows, mat.cols, mat.values,
                    mat.values.copy(), indicator, R, row_counts, col_counts)
        info.blocks["row"] = _Block(rel.id, rel.col, row_counts, indicator, R, mat.rows, mat.cols)
        info.blocks["col"] = _Block(rel.id, rel.row, col_counts, indicator.T, R.T, mat.cols, mat.rows)
        self.rels[rel.id] = info
        self.by_set[rel.row].append((info, info.blocks["row"]))
        self.by_set[rel.col].append((info, info.blocks["col"]))

    def xi(self, m: int) -> np.ndarray:
        """Linear predictor at the observed entries of relation m."""
        r = self.rels[m]
        U = self.state.factors.mean[r.row]
        V = self.state.factors.mean[r.col]
        b = self.state.bias[m]
        return np.einsum("nk,nk->n", U[r.rows], V[r.cols]) + b.row_mean[r.rows] + b.col_mean[r.cols]

    def refresh(self) -> None:
        """Recompute targets and residuals from the state."""
        for m, r in self.rels.items():
            if r.lik is not Likelihood.GAUSSIAN and m in self.state.pseudo:
                r.target[:] = self.state.pseudo[m].z
            r.resid[:] = r.target - self.xi(m)

    def gaussian_only(self) -> bool:
        return all(r.lik is Likelihood.GAUSSIAN for r in self.rels.values())

    # -- step 1: variances and gradients ---------------------------------

    def factor_precision(self, e: int) -> np.ndarray:
        """alpha_ek + sum_m tau_m sum_j (v_jk^2 + var(v_jk)) for every (i, k)."""
        s = self.state
        prec = np.broadcast_to(s.ard.mean(e), s.factors.mean[e].shape).copy()
        for rel, blk in self.by_set[e]:
            V = s.factors.mean[blk.other]
            Vv = s.factors.var[blk.other]
            prec += s.tau(rel.m) * (blk.indicator @ (V * V + Vv))
        return prec

    def factor_variance(self, e: int) -> np.ndarray:
        return 1.0 / self.factor_precision(e)

    def _other_var_sums(self, e):
        s = self.state
        return [blk.indicator @ s.factors.var[blk.other] for _, blk in self.by_set[e]]

    def gradient_column(self, e: int, k: int, var_sums=None) -> np.ndarray:
        s = self.state
        u = s.factors.mean[e][:, k]
        g = s.ard.mean(e)[k] * u
        if var_sums is None:
            var_sums = self._other_var_sums(e)
        for (rel, blk), vsum in zip(self.by_set[e], var_sums):
            v = s.factors.mean[blk.other][:, k]
            g = g + s.tau(rel.m) * (u * vsum[:, k] - _scatter_dot(blk.own_idx, blk.other_idx, rel.resid, v, u.size))
        return g

    def factor_gradient(self, e: int) -> np.ndarray:
        var_sums = self._other_var_sums(e)
        K = self.state.factors.mean[e].shape[1]
        G = np.empty_like(self.state.factors.mean[e])
        for k in range(K):
            G[:, k] = self.gradient_column(e, k, var_sums)
        return G

    # -- step 2: Newton ---------------------------------------------------

    def newton_target(self, u, g, curvature_inv, relaxation):
        rule = self.state.hyper.step_rule
        if rule == "newton":
            return u - relaxation * curvature_inv * g
        # literal transcription of the printed rule, kept for comparison only
        return (1.0 - relaxation) * u + relaxation * g / curvature_inv

    def _shift_column(self, e, k, delta):
        """Propagate a change of column k of set e into the residuals."""
        s = self.state
        for rel, blk in self.by_set[e]:
            _shift(blk.own_idx, blk.other_idx, rel.resid, delta, s.factors.mean[blk.other][:, k])

    def update_factors(self, e: int) -> float:
        """Steps 1-2 for one entity set; returns the largest absolute change."""
        s = self.state
        lam = s.hyper.newton_relaxation
        prec = self.factor_precision(e)
        inv = 1.0 / prec
        if not s.variant.map:
            s.factors.var[e] = inv
        var_sums = self._other_var_sums(e)
        U = s.factors.mean[e]
        biggest = 0.0
        for k in range(U.shape[1]):
            g = self.gradient_column(e, k, var_sums)
            new = self.newton_target(U[:, k], g, inv[:, k], lam)
            delta = new - U[:, k]
            U[:, k] = new
            self._shift_column(e, k, delta)
            if delta.size:
                biggest = max(biggest, float(np.abs(delta).max()))
        return biggest

    def rotation_weights(self) -> dict[int, np.ndarray]:
        """Per-entry weights w with sum_e sum_ik w_eik * mean_eik^2 = the mean-dependent
        part of the bound that an orthogonal rotation of the factors can change."""
        s = self.state
        w = {}
        for e in s.schema.set_ids():
            wk = np.broadcast_to(s.ard.mean(e), s.factors.mean[e].shape).copy()
            for rel, blk in self.by_set[e]:
                wk += s.tau(rel.m) * (blk.indicator @ s.factors.var[blk.other])
            w[e] = wk
        return w

    def rotate_factors(self) -> float:
        """Rotate factor pairs jointly across all entity sets to raise the bound.

        A rotation of columns (k, l) by the same angle in every set leaves all
        products, hence all residuals, unchanged. With variances and
        precisions held fixed the bound then depends on the angle only through
        A + B cos 2t + C sin 2t, maximized in closed form. Returns the total
        increase of the bound.
        """
        s = self.state
        ids = s.schema.set_ids()
        K = s.rank
        if K < 2:
            return 0.0
        w = self.rotation_weights()
        # one stacked copy so the pair loop runs in a compiled kernel
        U = np.ascontiguousarray(np.vstack([s.factors.mean[e] for e in ids]))
        W = np.ascontiguousarray(np.vstack([w[e] for e in ids]))
        gain = _jacobi_rotate(U, W)
        if gain > 0:
            offset = 0
            for e in ids:
                d = s.factors.mean[e].shape[0]
                s.factors.mean[e][:] = U[offset:offset + d]
                offset += d
            self.refresh()
        return gain

    # -- step 3: biases ---------------------------------------------------

    def update_bias(self, m: int) -> None:
        s = self.state
        if not s.variant.bias:
            return
        rel = self.rels[m]
        b = s.bias[m]
        tau = s.tau(m)
        # rows, given column biases
        resid_sum = rel.R @ np.ones(rel.R.shape[1])
        var, mean = self._bias_posterior(tau, rel.row_counts, resid_sum + rel.row_counts * b.row_mean,
                                         b.mu_row, b.s2_row)
        rel.resid[:] -= (mean - b.row_mean)[rel.rows]
        b.row_mean, b.row_var = mean, var
        # columns, given the new row biases
        resid_sum = rel.R.T @ np.ones(rel.R.shape[0])
        var, mean = self._bias_posterior(tau, rel.col_counts, resid_sum + rel.col_counts * b.col_mean,
                                         b.mu_col, b.s2_col)
        rel.resid[:] -= (mean - b.col_mean)[rel.cols]
        b.col_mean, b.col_var = mean, var
        b.mu_row, b.mu_row_var = self._hyper_mean(b.row_mean, b.s2_row)
        b.mu_col, b.mu_col_var = self._hyper_mean(b.col_mean, b.s2_col)
        b.s2_row = self._scale(b.row_mean, b.row_var, b.mu_row, b.mu_row_var)
        b.s2_col = self._scale(b.col_mean, b.col_var, b.mu_col, b.mu_col_var)
        # unobserved rows and columns follow their hyperprior exactly
        self._reset_empty(b, rel)

    def _reset_empty(self, b, rel) -> None:
        empty = rel.row_counts == 0
        b.row_mean[empty] = b.mu_row
        b.col_mean[rel.col_counts == 0] = b.mu_col
        if not self.state.variant.map:
            b.row_var[empty] = b.s2_row
            b.col_var[rel.col_counts == 0] = b.s2_col

    def _bias_posterior(self, tau, counts, resid_sum, mu, s2):
        # resid_sum is the residual summed over the row with this bias removed
        var = 1.0 / (tau * counts + 1.0 / s2)
        return var, var * (tau * resid_sum + mu / s2)

    def _hyper_mean(self, means, s2):
        prec = 1.0 + means.size / s2
        return float(means.sum() / s2 / prec), float(1.0 / prec)

    def _scale(self, means, var, mu, mu_var):
        if means.size == 0:
            return 1.0
        return max(float(np.mean((means - mu) ** 2 + var)) + mu_var, SIGMA2_FLOOR)

    # -- step 4: ARD ------------------------------------------------------

    def update_ard(self, e: int | None = None) -> None:
        s = self.state
        a0, b0 = s.hyper.a0, s.hyper.b0
        if s.variant.tied:
            ids = s.schema.set_ids()
            total = sum(np.sum(s.factors.mean[x] ** 2 + s.factors.var[x], axis=0) for x in ids)
            shape = a0 + 0.5 * sum(s.schema.size(x) for x in ids)
            for x in ids:
                s.ard.shape[x] = np.full_like(total, shape)
                s.ard.rate[x] = b0 + 0.5 * total
            return
        for x in [e] if e is not None else s.schema.set_ids():
            U, Uv = s.factors.mean[x], s.factors.var[x]
            s.ard.shape[x] = np.full(U.shape[1], a0 + 0.5 * U.shape[0])
            s.ard.rate[x] = b0 + 0.5 * np.sum(U * U + Uv, axis=0)

    # -- step 5: noise and pseudo-data -----------------------------------

    def expected_sq_error(self, m: int) -> float:
        """Sum over observed entries of E_q[(target - xi)^2]."""
        s = self.state
        r = self.rels[m]
        if r.n == 0:
            return 0.0
        U, Uv = s.factors.mean[r.row], s.factors.var[r.row]
        V, Vv = s.factors.mean[r.col], s.factors.var[r.col]
        total = float(r.resid @ r.resid)
        OVv = r.indicator @ Vv
        total += float(np.sum(U * U * OVv) + np.sum(Uv * (r.indicator @ (V * V))) + np.sum(Uv * OVv))
        b = s.bias[m]
        total += float(r.row_counts @ b.row_var + r.col_counts @ b.col_var)
        return total

    def update_tau(self, m: int) -> None:
        r = self.rels[m]
        if r.lik is not Likelihood.GAUSSIAN:
            raise ValueError(f"relation {m} is {r.lik.value}; tau is only learned for Gaussian relations")
        s = self.state
        s.noise.shape[m] = s.hyper.p0 + 0.5 * r.n
        s.noise.rate[m] = s.hyper.q0 + 0.5 * self.expected_sq_error(m)

    def update_pseudodata(self, m: int) -> None:
        r = self.rels[m]
        if r.lik is Likelihood.GAUSSIAN:
            raise ValueError(f"relation {m} is Gaussian; pseudo-data only apply to other likelihoods")
        s = self.state
        lik = spec_for(r.lik)
        prior = s.pseudo.get(m)
        kappa = prior.kappa if prior is not None else lik.kappa(r.values)
        xi = self.xi(m)
        if r.lik is Likelihood.COUNT:
            xi = np.clip(xi, -30.0, 30.0)
        z = lik.pseudo_targets(xi, r.values, kappa)
        s.pseudo[m] = PseudoData(z, kappa, xi)
        s.noise.kappa[m] = kappa
        r.target[:] = z
        r.resid[:] = z - self.xi(m)

    # -- objective --------------------------------------------------------

    def objective_terms(self) -> dict[str, float]:
        """Mean-field lower bound, split by term for diagnostics."""
        s = self.state
        terms: dict[str, float] = {}
        for m, r in self.rels.items():
            S = self.expected_sq_error(m)
            if r.lik is Likelihood.GAUSSIAN:
                p, q = s.noise.shape[m], s.noise.rate[m]
                tau, logtau = _gamma_expect(p, q)
                terms[f"lik[{m}]"] = 0.5 * r.n * (logtau - LOG2PI) - 0.5 * tau * S
                terms[f"tau[{m}]"] = (_gamma_prior_term(s.hyper.p0, s.hyper.q0, tau, logtau)
                                      + _gamma_entropy(p, q))
            else:
                terms[f"lik[{m}]"] = self._surrogate_loglik(m, S)
        for e in s.schema.set_ids():
            U, Uv = s.factors.mean[e], s.factors.var[e]
            a, b = s.ard.shape[e], s.ard.rate[e]
            alpha, logalpha = _gamma_expect(a, b)
            d = U.shape[0]
            terms[f"U[{e}]"] = float(np.sum(0.5 * d * logalpha - 0.5 * alpha * np.sum(U * U + Uv, axis=0))
                                     + 0.5 * np.sum(np.log(Uv)) + 0.5 * Uv.size)
            if not s.variant.tied:
                terms[f"alpha[{e}]"] = float(np.sum(_gamma_prior_term(s.hyper.a0, s.hyper.b0, alpha, logalpha)
                                                    + _gamma_entropy(a, b)))
        if s.variant.tied and s.schema.n_sets:
            e = s.schema.set_ids()[0]
            a, b = s.ard.shape[e], s.ard.rate[e]
            alpha, logalpha = _gamma_expect(a, b)
            terms["alpha"] = float(np.sum(_gamma_prior_term(s.hyper.a0, s.hyper.b0, alpha, logalpha)
                                          + _gamma_entropy(a, b)))
        if s.variant.bias:
            for m, b in s.bias.items():
                terms[f"bias[{m}]"] = (_bias_block(b.row_mean, b.row_var, b.mu_row, b.mu_row_var, b.s2_row)
                                       + _bias_block(b.col_mean, b.col_var, b.mu_col, b.mu_col_var, b.s2_col))
        return terms

    def _surrogate_loglik(self, m: int, S: float) -> float:
        """Lower bound on E_q[log p(x | xi)] from the quadratic majorizer at xi0."""
        r = self.rels[m]
        pd = self.state.pseudo[m]
        lik = spec_for(r.lik)
        at_tangent = lik.nll(pd.xi, r.values) - 0.5 * pd.kappa * (pd.xi - pd.z) ** 2
        return float(-np.sum(at_tangent) - 0.5 * pd.kappa * S)

    def objective(self) -> float:
        terms = self.objective_terms()
        bad = [k for k, v in terms.items() if not np.isfinite(v)]
        if bad:
            raise FitError(f"non-finite objective term(s): {', '.join(bad)}")
        return float(sum(terms.values()))

    elbo = objective

    # -- driver -----------------------------------------------------------

    def train_rmse(self) -> dict[int, float]:
        out = {}
        for m, r in self.rels.items():
            if r.n == 0:
                out[m] = float("nan")
                continue
            pred = spec_for(r.lik).mean(self.xi(m))
            out[m] = float(np.sqrt(np.mean((r.values - pred) ** 2)))
        return out

    def prepare(self) -> None:
        for m, r in self.rels.items():
            if r.lik is not Likelihood.GAUSSIAN and m not in self.state.pseudo:
                self.update_pseudodata(m)

    def sweep(self, update_ard: bool = True) -> float:
        s = self.state
        biggest = 0.0
        for e in s.schema.set_ids():
            biggest = max(biggest, self.update_factors(e))
        if s.hyper.rotate:
            self.rotate_factors()
        for m in self.rels:
            self.update_bias(m)
        if update_ard:
            self.update_ard()
        for m, r in self.rels.items():
            if r.lik is Likelihood.GAUSSIAN:
                self.update_tau(m)
            else:
                self.update_pseudodata(m)
        return biggest

    def run(self, max_iters: int | None = None, tol: float | None = None, strict: bool = True):
        hyper = self.state.hyper
        max_iters = hyper.max_iters if max_iters is None else max_iters
        tol = hyper.tol if tol is None else tol
        self.prepare()
        monotone = self.gaussian_only()
        trace: list[TraceRecord] = []
        prev = None
        warmup = hyper.ard_warmup
        for it in range(1, max_iters + 1):
            delta = self.sweep(update_ard=it > warmup)
            value = self.objective()
            trace.append(TraceRecord(it, value, self.train_rmse(), delta))
            if prev is not None:
                change = value - prev
                if strict and monotone and change < -tol * abs(prev):
                    raise DivergenceError(
                        f"objective decreased from {prev:.10g} to {value:.10g} at sweep {it}"
                    )
                if it > warmup + 1 and abs(change) < tol * abs(value):
                    break
            prev = value
        log.debug("stopped after %d sweeps, objective %.6g", len(trace), trace[-1].elbo if trace else np.nan)
        return trace


@njit(cache=True)
def _scatter_dot(own, other, resid, v, n):
    """out[i] = sum over entries p with own[p] == i of resid[p] * v[other[p]]."""
    out = np.zeros(n)
    for p in range(own.size):
        out[own[p]] += resid[p] * v[other[p]]
    return out


@njit(cache=True)
def _shift(own, other, resid, delta, v):
    for p in range(own.size):
        resid[p] -= delta[own[p]] * v[other[p]]


@njit(cache=True)
def _jacobi_rotate(U, W):
    """Sweep over column pairs of U, rotating each to minimize sum(W * U**2)."""
    n, K = U.shape
    gain = 0.0
    for k in range(K - 1):
        for l in range(k + 1, K):
            P = Q = P2 = Q2 = X = Y = 0.0
            for i in range(n):
                uk = U[i, k]
                ul = U[i, l]
                P += W[i, k] * uk * uk
                Q += W[i, k] * ul * ul
                P2 += W[i, l] * uk * uk
                Q2 += W[i, l] * ul * ul
                X += W[i, k] * uk * ul
                Y += W[i, l] * uk * ul
            B = 0.5 * (P + Q2 - Q - P2)
            C = Y - X
            # the penalty is half of A + B cos 2t + C sin 2t; t = 0 gives A + B
            improvement = 0.5 * (B + np.hypot(B, C))
            if not improvement > 1e-12 * (abs(P) + abs(Q2) + 1e-300):
                continue
            t = 0.5 * np.arctan2(-C, -B)
            c = np.cos(t)
            sn = np.sin(t)
            for i in range(n):
                uk = U[i, k]
                ul = U[i, l]
                U[i, k] = c * uk - sn * ul
                U[i, l] = sn * uk + c * ul
            gain += improvement
    return gain


def _bias_block(mean, var, mu, mu_var, s2):
    d = mean.size
    value = -0.5 * d * (LOG2PI + np.log(s2)) - float(np.sum((mean - mu) ** 2 + var + mu_var)) / (2.0 * s2)
    value += 0.5 * float(np.sum(np.log(var))) + 0.5 * d * (LOG2PI + 1.0)
    value += -0.5 * LOG2PI - 0.5 * (mu * mu + mu_var) + 0.5 * (np.log(mu_var) + LOG2PI + 1.0)
    return float(value)


def make_engine(state: ModelState, data) -> Engine:
    if state.variant.map:
        from .map import MapEngine

        return MapEngine(state, data)
    return Engine(state, data)


# -- functional surface ------------------------------------------------------


def factor_gradient(state: ModelState, data, e: int) -> np.ndarray:
    """Gradient of the expected negative log joint w.r.t. the factor means of set e."""
    return make_engine(state, data).factor_gradient(e)


def factor_variance(state: ModelState, data, e: int) -> np.ndarray:
    return Engine(state, data).factor_variance(e)


def newton_step(state: ModelState, e: int, gradient: np.ndarray, relaxation: float | None = None) -> np.ndarray:
    """Damped Newton move ``u - relaxation * var * g`` using the stored variances.

    ``relaxation`` may be 1 here (a full step), unlike in Hyperparams.
    """
    lam = state.hyper.newton_relaxation if relaxation is None else relaxation
    U, Uv = state.factors.mean[e], state.factors.var[e]
    if state.hyper.step_rule == "newton":
        return U - lam * Uv * gradient
    return (1.0 - lam) * U + lam * gradient / Uv


def update_bias(state: ModelState, data, m: int) -> None:
    make_engine(state, data).update_bias(m)


def update_ard(state: ModelState, e: int | None = None) -> None:
    make_engine(state, {}).update_ard(e)


def update_tau(state: ModelState, data, m: int) -> None:
    make_engine(state, data).update_tau(m)


def update_pseudodata(state: ModelState, data, m: int) -> PseudoData:
    make_engine(state, data).update_pseudodata(m)
    return state.pseudo[m]


def elbo(state: ModelState, data) -> float:
    eng = Engine(state, data)
    missing = [m for m, r in eng.rels.items() if r.lik is not Likelihood.GAUSSIAN and m not in state.pseudo]
    if missing:
        raise FitError(f"relations {missing} need pseudo-data before the bound can be evaluated")
    return eng.objective()


def fit(
    schema: Schema,
    data,
    hyper: Hyperparams | None = None,
    variant: ModelVariant | None = None,
    seed: int = 0,
    *,
    state: ModelState | None = None,
    rank: int | None = None,
    strict: bool = True,
):
    """Run sweeps until the relative objective change drops below ``hyper.tol``.

    Returns the fitted state and the per-sweep trace. Pass ``state`` to start
    from a given initialization instead of a fresh seeded one.
    """
    if rank is None or rank >= 1:
        require_valid(schema)
    hyper = hyper or Hyperparams()
    variant = variant or ModelVariant()
    if state is None:
        state = init(schema, hyper, variant, seed, rank=rank)
    engine = make_engine(state, data)
    trace = engine.run(strict=strict)
    return state, trace


def write_trace(trace: list[TraceRecord], path: str | Path) -> None:
    rel_ids = sorted(trace[0].rmse) if trace else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "elbo", *[f"rmse_{m}" for m in rel_ids], "max_delta"])
        for rec in trace:
            w.writerow([rec.iteration, repr(rec.elbo), *[repr(rec.rmse[m]) for m in rel_ids], repr(rec.max_delta)])
