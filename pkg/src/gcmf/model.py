"""Posterior state, hyperparameters, initialization and prediction.

Each entity set ``e`` owns a factor matrix with posterior means ``mean[e]``
(d_e x K) and variances ``var[e]``. Relation ``m`` between row set ``r`` and
column set ``c`` predicts

    xi_ij = sum_k mean[r][i, k] * mean[c][j, k] + row_bias_i + col_bias_j

Biases are kept per relation, so an entity appearing in two matrices carries
two separate biases.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .likelihoods import spec_for
from .schema import Likelihood, Schema, require_valid
from .util import rng_for

CHECKPOINT_FORMAT = "gcmf-checkpoint/1"


@dataclass(frozen=True)
class Hyperparams:
    """Gamma prior parameters and optimizer settings.

    ``a0, b0`` are the shape/rate of the ARD precision prior, ``p0, q0`` the
    shape/rate of the noise precision prior. ARD precisions stay at their
    initial values for the first ``ard_warmup`` sweeps so that every factor
    gets a chance to pick up signal before pruning starts; from a random start
    the pruning otherwise locks in whichever factors lag behind early on.
    """

    a0: float = 1e-10
    b0: float = 1e-10
    p0: float = 1e-10
    q0: float = 1e-10
    newton_relaxation: float = 0.5
    max_iters: int = 2000
    tol: float = 1e-6
    step_rule: str = "newton"
    ard_warmup: int = 30
    rotate: bool = True

    def __post_init__(self):
        for name in ("a0", "b0", "p0", "q0", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.newton_relaxation < 1.0:
            raise ValueError(f"newton_relaxation must lie in (0, 1), got {self.newton_relaxation}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ard_warmup < 0:
            raise ValueError("ard_warmup must be >= 0")
        if self.step_rule not in ("newton", "printed"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")


@dataclass(frozen=True)
class ModelVariant:
    """gCMF learns one ARD precision per (entity set, factor); CMF ties them per factor."""

    kind: str = "gcmf"
    map: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.kind not in ("gcmf", "cmf"):
            raise ValueError(f"unknown variant kind {self.kind!r}")

    @property
    def tied(self) -> bool:
        return self.kind == "cmf"

    @property
    def name(self) -> str:
        base = "gCMF" if self.kind == "gcmf" else "CMF"
        return base + ("-MAP" if self.map else "")

    @classmethod
    def parse(cls, name: str, bias: bool = True) -> "ModelVariant":
        key = name.lower().replace("_", "-")
        is_map = key.endswith("-map")
        kind = key[:-4] if is_map else key
        return cls(kind, is_map, bias)


@dataclass
class FactorState:
    mean: dict[int, np.ndarray]
    var: dict[int, np.ndarray]


@dataclass
class ArdState:
    shape: dict[int, np.ndarray]
    rate: dict[int, np.ndarray]

    def mean(self, e: int) -> np.ndarray:
        return self.shape[e] / self.rate[e]


@dataclass
class NoiseState:
    """Gamma posteriors over relation precisions.

    Non-Gaussian relations use the fixed curvature bound ``kappa`` as their
    precision; it overrides the Gamma mean once pseudo-data exist.
    """

    shape: dict[int, float]
    rate: dict[int, float]
    kappa: dict[int, float] = field(default_factory=dict)

    def tau(self, m: int) -> float:
        if m in self.kappa:
            return self.kappa[m]
        return self.shape[m] / self.rate[m]


@dataclass
class RelationBias:
    row_mean: np.ndarray
    row_var: np.ndarray
    col_mean: np.ndarray
    col_var: np.ndarray
    mu_row: float = 0.0
    mu_row_var: float = 1.0
    mu_col: float = 0.0
    mu_col_var: float = 1.0
    s2_row: float = 1.0
    s2_col: float = 1.0


@dataclass
class PseudoData:
    """Gaussianized targets for one non-Gaussian relation, aligned with its entries."""

    z: np.ndarray
    kappa: float
    xi: np.ndarray


@dataclass
class ModelState:
    schema: Schema
    variant: ModelVariant
    hyper: Hyperparams
    seed: int
    factors: FactorState
    ard: ArdState
    noise: NoiseState
    bias: dict[int, RelationBias]
    pseudo: dict[int, PseudoData] = field(default_factory=dict)

    @property
    def rank(self) -> int:
        first = next(iter(self.factors.mean.values()))
        return first.shape[1]

    def tau(self, m: int) -> float:
        return self.noise.tau(m)

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def init(
    schema: Schema,
    hyper: Hyperparams | None = None,
    variant: ModelVariant | None = None,
    seed: int = 0,
    rank: int | None = None,
) -> ModelState:
    """Fresh state: means ~ N(0, 1/K), unit variances and unit precisions.

    ``rank`` overrides ``schema.rank``; ``rank=0`` gives a bias-only model.
    MAP variants start with all variances at zero.
    """
    require_valid(schema if rank is None or rank >= 1 else replace(schema, rank=1))
    hyper = hyper or Hyperparams()
    variant = variant or ModelVariant()
    K = schema.rank if rank is None else int(rank)
    unit_var = 0.0 if variant.map else 1.0

    mean, var, a, b = {}, {}, {}, {}
    for s in schema.entity_sets:
        rng = rng_for(seed, "init", s.id)
        scale = 1.0 / np.sqrt(K) if K else 0.0
        mean[s.id] = rng.standard_normal((s.size, K)) * scale
        var[s.id] = np.full((s.size, K), unit_var)
        a[s.id] = np.ones(K)
        b[s.id] = np.ones(K)

    bias_var = unit_var if variant.bias else 0.0
    biases = {}
    for rel in schema.relations:
        d_r, d_c = schema.size(rel.row), schema.size(rel.col)
        biases[rel.id] = RelationBias(
            np.zeros(d_r), np.full(d_r, bias_var), np.zeros(d_c), np.full(d_c, bias_var),
            mu_row_var=bias_var, mu_col_var=bias_var,
        )
    noise = NoiseState({m: 1.0 for m in schema.relation_ids()}, {m: 1.0 for m in schema.relation_ids()})
    return ModelState(schema, variant, hyper, int(seed), FactorState(mean, var), ArdState(a, b), noise, biases)


def _check_index(state: ModelState, m: int, rows, cols):
    rel = state.schema.relation(m)
    d_r, d_c = state.schema.size(rel.row), state.schema.size(rel.col)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= d_r):
        raise IndexError(f"row index out of range for relation {m} ({d_r} rows)")
    if cols.size and (cols.min() < 0 or cols.max() >= d_c):
        raise IndexError(f"column index out of range for relation {m} ({d_c} columns)")
    return rel, rows, cols


def linear_predictor(state: ModelState, m: int, rows, cols) -> np.ndarray:
    """xi for relation m at the given (row, col) pairs; accepts scalars or arrays."""
    if not 1 <= m <= state.schema.n_relations:
        raise IndexError(f"unknown relation {m}")
    rel, r, c = _check_index(state, m, rows, cols)
    U = state.factors.mean[rel.row]
    V = state.factors.mean[rel.col]
    bias = state.bias[m]
    xi = np.einsum("nk,nk->n", U[r.ravel()], V[c.ravel()]).reshape(r.shape)
    return xi + bias.row_mean[r] + bias.col_mean[c]


def predict(state: ModelState, m: int, i, j):
    """Linear predictor; a float for scalar indices."""
    xi = linear_predictor(state, m, i, j)
    return float(xi) if np.ndim(xi) == 0 else xi


def predict_mean(state: ModelState, m: int, i, j):
    """Mean of the relation's likelihood: xi, sigmoid(xi) or softplus(xi)."""
    lik = state.schema.relation(m).likelihood
    out = spec_for(lik).mean(linear_predictor(state, m, i, j))
    return float(out) if np.ndim(out) == 0 else out


def ard_means(state: ModelState) -> np.ndarray:
    """(E, K) matrix of posterior mean ARD precisions."""
    return np.vstack([state.ard.mean(e) for e in state.schema.set_ids()])


def factor_activity(state: ModelState, share_ratio: float = 100.0, prune_ratio: float = 1e3) -> np.ndarray:
    """Boolean (E, K) table: is factor k active for entity set e?

    Factor k is active for e when its precision is within ``share_ratio`` of
    the smallest precision any set has for k. Pruned factors have uniformly
    huge precisions and would pass that test, so a factor must also be within
    ``prune_ratio`` of the strongest factor of e and carry more squared mean
    than posterior variance. Reporting only; inference never looks at this.
    """
    alpha = ard_means(state)
    if alpha.shape[1] == 0:
        return np.zeros(alpha.shape, bool)
    across_sets = alpha < share_ratio * alpha.min(axis=0, keepdims=True)
    within_set = alpha < prune_ratio * alpha.min(axis=1, keepdims=True)
    ids = state.schema.set_ids()
    energy = np.vstack([np.sum(state.factors.mean[e] ** 2, axis=0) for e in ids])
    spread = np.vstack([np.sum(state.factors.var[e], axis=0) for e in ids])
    return across_sets & within_set & (energy > spread)


def activity_report(state: ModelState, **kwargs) -> dict:
    """Classify each factor as pruned, shared by all sets, private to a relation, or partial."""
    active = factor_activity(state, **kwargs)
    ids = state.schema.set_ids()
    report = {"active": active, "shared": [], "private": {}, "partial": [], "pruned": []}
    pairs = {frozenset((r.row, r.col)): r.id for r in state.schema.relations}
    for k in range(active.shape[1]):
        on = frozenset(e for e, flag in zip(ids, active[:, k]) if flag)
        if not on:
            report["pruned"].append(k)
        elif len(on) == len(ids):
            report["shared"].append(k)
        elif on in pairs:
            report["private"].setdefault(pairs[on], []).append(k)
        else:
            report["partial"].append(k)
    report["n_active"] = int(active.any(axis=0).sum())
    return report


def _arr(x):
    return np.asarray(x, dtype=float).tolist()


def state_to_dict(state: ModelState) -> dict:
    s = state
    return {
        "format": CHECKPOINT_FORMAT,
        "schema_sha256": s.schema.digest(),
        "schema": s.schema.to_dict(),
        "variant": asdict(s.variant),
        "hyper": asdict(s.hyper),
        "seed": s.seed,
        "factors": {
            str(e): {"mean": _arr(s.factors.mean[e]), "var": _arr(s.factors.var[e])}
            for e in s.factors.mean
        },
        "ard": {str(e): {"shape": _arr(s.ard.shape[e]), "rate": _arr(s.ard.rate[e])} for e in s.ard.shape},
        "noise": {
            str(m): {"shape": float(s.noise.shape[m]), "rate": float(s.noise.rate[m]),
                     "kappa": s.noise.kappa.get(m)}
            for m in s.noise.shape
        },
        "bias": {
            str(m): {k: (_arr(v) if isinstance(v, np.ndarray) else float(v)) for k, v in vars(b).items()}
            for m, b in s.bias.items()
        },
        "pseudo": {
            str(m): {"z": _arr(p.z), "kappa": float(p.kappa), "xi": _arr(p.xi)} for m, p in s.pseudo.items()
        },
    }


def state_from_dict(payload: dict) -> ModelState:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    schema = Schema.from_dict(payload["schema"])
    if schema.digest() != payload["schema_sha256"]:
        raise ValueError("checkpoint schema hash mismatch")
    def mat(rows, d):
        return np.array(rows, dtype=float).reshape(d, -1) if rows else np.zeros((d, 0))

    factors = FactorState(
        {int(e): mat(v["mean"], schema.size(int(e))) for e, v in payload["factors"].items()},
        {int(e): mat(v["var"], schema.size(int(e))) for e, v in payload["factors"].items()},
    )
    ard = ArdState(
        {int(e): np.array(v["shape"], dtype=float) for e, v in payload["ard"].items()},
        {int(e): np.array(v["rate"], dtype=float) for e, v in payload["ard"].items()},
    )
    noise = NoiseState(
        {int(m): v["shape"] for m, v in payload["noise"].items()},
        {int(m): v["rate"] for m, v in payload["noise"].items()},
        {int(m): v["kappa"] for m, v in payload["noise"].items() if v["kappa"] is not None},
    )
    bias = {}
    for m, v in payload["bias"].items():
        fields = {k: (np.array(x, dtype=float) if isinstance(x, list) else float(x)) for k, x in v.items()}
        bias[int(m)] = RelationBias(**fields)
    pseudo = {
        int(m): PseudoData(np.array(v["z"], dtype=float), float(v["kappa"]), np.array(v["xi"], dtype=float))
        for m, v in payload["pseudo"].items()
    }
    return ModelState(
        schema, ModelVariant(**payload["variant"]), Hyperparams(**payload["hyper"]), int(payload["seed"]),
        factors, ard, noise, bias, pseudo,
    )


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Write a JSON checkpoint; floats use shortest round-trip repr, so it is exact."""
    text = json.dumps(state_to_dict(state), sort_keys=True, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n")


def load_checkpoint(path: str | Path) -> ModelState:
    return state_from_dict(json.loads(Path(path).read_text()))


def relation_likelihood(state: ModelState, m: int) -> Likelihood:
    return state.schema.relation(m).likelihood
