"""Sparse triplet storage for observed matrices, plus held-out and k-fold splits.

Triplet files hold one observation per line: ``relation row col value``,
whitespace separated. Relation ids are 1-based, row and column indices are
0-based. Blank lines and lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .schema import Likelihood, Schema
from .util import fmt_float, rng_for


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Observed entries of one relation, as parallel index/value arrays."""

    relation_id: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise DataError("rows, cols and values must be 1-d arrays of equal length")
        # canonical row-major order; pseudo-data and workspaces align with it
        order = np.lexsort((cols, rows))
        if order.size and np.any(np.diff(order) != 1):
            rows, cols, vals = rows[order], cols[order], vals[order]
        for arr in (rows, cols, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))

    @property
    def n_obs(self) -> int:
        return int(self.rows.size)

    def __len__(self) -> int:
        return self.n_obs

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def subset(self, index: np.ndarray) -> "ObservedMatrix":
        index = np.sort(np.asarray(index, dtype=np.int64))
        return ObservedMatrix(
            self.relation_id, self.rows[index], self.cols[index], self.values[index], self.shape
        )

    def check(self, likelihood: Likelihood = Likelihood.GAUSSIAN) -> None:
        d_r, d_c = self.shape
        if self.n_obs:
            if self.rows.min() < 0 or self.rows.max() >= d_r:
                raise DataError(f"relation {self.relation_id}: row index out of range [0, {d_r})")
            if self.cols.min() < 0 or self.cols.max() >= d_c:
                raise DataError(f"relation {self.relation_id}: col index out of range [0, {d_c})")
        keys = self.rows * d_c + self.cols
        if np.unique(keys).size != keys.size:
            raise DataError(f"relation {self.relation_id}: duplicate (row, col) entries")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"relation {self.relation_id}: non-finite values")
        check_domain(self.values, likelihood, self.relation_id)

    @classmethod
    def from_dense(cls, relation_id: int, dense: np.ndarray, mask: np.ndarray | None = None):
        dense = np.asarray(dense, dtype=float)
        mask = np.ones(dense.shape, bool) if mask is None else np.asarray(mask, bool)
        rows, cols = np.nonzero(mask)
        return cls(relation_id, rows, cols, dense[rows, cols], dense.shape)

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.shape, fill)
        out[self.rows, self.cols] = self.values
        return out


def check_domain(values: np.ndarray, likelihood: Likelihood, relation_id: int = 0) -> None:
    if likelihood is Likelihood.BERNOULLI:
        bad = ~np.isin(values, (0.0, 1.0))
        if bad.any():
            raise DataError(
                f"relation {relation_id}: Bernoulli values must be 0 or 1, got {values[bad][0]:g}"
            )
    elif likelihood is Likelihood.COUNT:
        bad = (values < 0) | (values != np.round(values))
        if bad.any():
            raise DataError(
                f"relation {relation_id}: count values must be non-negative integers, "
                f"got {values[bad][0]:g}"
            )


def empty_matrix(schema: Schema, m: int) -> ObservedMatrix:
    rel = schema.relation(m)
    shape = (schema.size(rel.row), schema.size(rel.col))
    return ObservedMatrix(m, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), shape)


def load_triplets(paths: "str | Path | Iterable[str | Path]", schema: Schema) -> list[ObservedMatrix]:
    """Parse one or more triplet files into one matrix per relation seen."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    buckets: dict[int, tuple[list, list, list, dict]] = {}
    n_rel = schema.n_relations
    for path in paths:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                parts = text.split()
                where = f"{path}:{lineno}"
                if len(parts) != 4:
                    raise DataError(f"{where}: expected 4 fields, got {len(parts)}")
                try:
                    m, i, j = int(parts[0]), int(parts[1]), int(parts[2])
                    value = float(parts[3])
                except ValueError:
                    raise DataError(f"{where}: cannot parse {text!r}") from None
                if not 1 <= m <= n_rel:
                    raise DataError(f"{where}: unknown relation id {m}")
                rel = schema.relation(m)
                d_r, d_c = schema.size(rel.row), schema.size(rel.col)
                if not (0 <= i < d_r and 0 <= j < d_c):
                    raise DataError(f"{where}: index ({i}, {j}) out of bounds ({d_r}, {d_c})")
                if not np.isfinite(value):
                    raise DataError(f"{where}: non-finite value")
                try:
                    check_domain(np.array([value]), rel.likelihood, m)
                except DataError as exc:
                    raise DataError(f"{where}: {exc}") from None
                rows, cols, vals, seen = buckets.setdefault(m, ([], [], [], {}))
                if (i, j) in seen:
                    raise DataError(
                        f"{where}: duplicate entry ({m}, {i}, {j}), first seen at line {seen[i, j]}"
                    )
                seen[i, j] = lineno
                rows.append(i)
                cols.append(j)
                vals.append(value)
    out = []
    for m in sorted(buckets):
        rows, cols, vals, _ = buckets[m]
        rel = schema.relation(m)
        shape = (schema.size(rel.row), schema.size(rel.col))
        out.append(ObservedMatrix(m, np.array(rows), np.array(cols), np.array(vals), shape))
    return out


def as_data(matrices: "Iterable[ObservedMatrix] | Mapping[int, ObservedMatrix]", schema: Schema):
    """Normalize to a dict keyed by relation id, covering every relation."""
    if isinstance(matrices, Mapping):
        matrices = matrices.values()
    data = {mat.relation_id: mat for mat in matrices}
    for m in schema.relation_ids():
        data.setdefault(m, empty_matrix(schema, m))
        data[m].check(schema.relation(m).likelihood)
    return data


def write_triplets(matrices: Iterable[ObservedMatrix], path: str | Path) -> None:
    with open(path, "w") as fh:
        for mat in matrices:
            for i, j, v in zip(mat.rows.tolist(), mat.cols.tolist(), mat.values.tolist()):
                fh.write(f"{mat.relation_id} {i} {j} {fmt_float(v)}\n")


def holdout_split(matrix: ObservedMatrix, fraction: float, seed: int):
    """Move round(fraction * n_obs) random entries into a test matrix."""
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"holdout fraction must be in [0, 1), got {fraction}")
    n = matrix.n_obs
    n_test = int(round(fraction * n))
    perm = rng_for(seed, "holdout", matrix.relation_id).permutation(n)
    return matrix.subset(perm[n_test:]), matrix.subset(perm[:n_test])


def kfold_split(matrix: ObservedMatrix, k: int, seed: int):
    """Return k (train, validation) pairs whose validation parts partition the entries."""
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    n = matrix.n_obs
    if n < k:
        raise DataError(f"cannot make {k} folds from {n} observations")
    perm = rng_for(seed, "kfold", matrix.relation_id).permutation(n)
    folds = np.array_split(perm, k)
    pairs = []
    for f in range(k):
        train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
        pairs.append((matrix.subset(train_idx), matrix.subset(folds[f])))
    return pairs


def split_all(data: Mapping[int, ObservedMatrix], fraction: float, seed: int):
    """Hold out the same fraction from every relation."""
    train, test = {}, {}
    for m, mat in data.items():
        train[m], test[m] = holdout_split(mat, fraction, seed)
    return train, test


def write_split(train, test, directory: str | Path, seed: int, fraction: float) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_triplets(_values(train), directory / "train.txt")
    write_triplets(_values(test), directory / "test.txt")
    record = {"seed": seed, "fraction": fraction, "method": "holdout_split per relation"}
    (directory / "split.json").write_text(json.dumps(record, indent=2) + "\n")


def _values(data):
    return [data[m] for m in sorted(data)] if isinstance(data, Mapping) else list(data)
