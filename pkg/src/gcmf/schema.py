"""Relational schema: entity sets, the matrices between them, and the rank."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class Likelihood(str, Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    COUNT = "count"

    @classmethod
    def parse(cls, value: "str | Likelihood") -> "Likelihood":
        if isinstance(value, Likelihood):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown likelihood {value!r}") from None


@dataclass(frozen=True)
class EntitySet:
    id: int
    name: str
    size: int


@dataclass(frozen=True)
class Relation:
    id: int
    row: int
    col: int
    likelihood: Likelihood = Likelihood.GAUSSIAN


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    """Entity sets, relations between them, and the factorization rank.

    The collection of matrices is equivalent to one symmetric matrix over all
    entities with only the relation blocks observed; we never build that
    matrix and instead keep one factor matrix per entity set.
    """

    entity_sets: tuple[EntitySet, ...]
    relations: tuple[Relation, ...]
    rank: int

    def __post_init__(self):
        object.__setattr__(self, "entity_sets", tuple(self.entity_sets))
        object.__setattr__(self, "relations", tuple(self.relations))

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        pairs: Iterable[tuple],
        rank: int,
        names: Sequence[str] | None = None,
    ) -> "Schema":
        """Construct from 1-based (row, col[, likelihood]) pairs."""
        names = list(names) if names is not None else [f"set{e + 1}" for e in range(len(sizes))]
        sets = tuple(EntitySet(e + 1, names[e], int(d)) for e, d in enumerate(sizes))
        rels = []
        for m, pair in enumerate(pairs):
            row, col = pair[0], pair[1]
            lik = Likelihood.parse(pair[2]) if len(pair) > 2 else Likelihood.GAUSSIAN
            rels.append(Relation(m + 1, int(row), int(col), lik))
        return cls(sets, tuple(rels), int(rank))

    @property
    def n_sets(self) -> int:
        return len(self.entity_sets)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def size(self, e: int) -> int:
        return self.entity_sets[e - 1].size

    def relation(self, m: int) -> Relation:
        return self.relations[m - 1]

    def set_ids(self) -> list[int]:
        return [s.id for s in self.entity_sets]

    def relation_ids(self) -> list[int]:
        return [r.id for r in self.relations]

    def incident(self, e: int) -> list[tuple[Relation, str]]:
        """Relations touching entity set `e`, tagged with the side it sits on."""
        out = []
        for rel in self.relations:
            if rel.row == e:
                out.append((rel, "row"))
            if rel.col == e:
                out.append((rel, "col"))
        return out

    @property
    def total_entities(self) -> int:
        return sum(s.size for s in self.entity_sets)

    def to_dict(self) -> dict:
        return {
            "entity_sets": [{"name": s.name, "size": s.size} for s in self.entity_sets],
            "relations": [
                {"row": r.row, "col": r.col, "likelihood": r.likelihood.value}
                for r in self.relations
            ],
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Schema":
        try:
            sets_raw = payload["entity_sets"]
            rels_raw = payload["relations"]
            rank = int(payload["rank"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"schema is missing field {exc}") from None
        names = [str(s.get("name", f"set{e + 1}")) for e, s in enumerate(sets_raw)]
        by_name = {name: e + 1 for e, name in enumerate(names)}

        def ref(value):
            # entity sets may be referenced by 1-based id or by name
            if isinstance(value, str) and not value.isdigit():
                if value not in by_name:
                    raise SchemaError(f"unknown entity set {value!r}")
                return by_name[value]
            return int(value)

        sizes = [int(s["size"]) for s in sets_raw]
        pairs = [
            (ref(r["row"]), ref(r["col"]), r.get("likelihood", "gaussian")) for r in rels_raw
        ]
        return cls.build(sizes, pairs, rank, names)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def validate(schema: Schema) -> ValidationReport:
    """Collect every structural problem instead of stopping at the first."""
    problems: list[str] = []
    ids = [s.id for s in schema.entity_sets]
    if ids != list(range(1, len(ids) + 1)):
        problems.append(f"entity set ids must be contiguous from 1, got {ids}")
    for s in schema.entity_sets:
        if s.size < 1:
            problems.append(f"entity set {s.id} has cardinality {s.size} < 1")
    if schema.rank < 1:
        problems.append(f"rank K={schema.rank} < 1")

    rel_ids = [r.id for r in schema.relations]
    if rel_ids != list(range(1, len(rel_ids) + 1)):
        problems.append(f"relation ids must be contiguous from 1, got {rel_ids}")

    known = set(ids)
    seen_pairs = set()
    for r in schema.relations:
        dangling = [x for x in (r.row, r.col) if x not in known]
        if dangling:
            problems.append(f"relation {r.id} references unknown entity set(s) {dangling}")
            continue
        if r.row == r.col:
            problems.append(f"relation {r.id} is a self-relation on entity set {r.row}")
        if (r.row, r.col) in seen_pairs:
            problems.append(f"relation {r.id} duplicates the pair ({r.row}, {r.col})")
        seen_pairs.add((r.row, r.col))

    used = {x for r in schema.relations for x in (r.row, r.col)}
    for e in ids:
        if e not in used:
            problems.append(f"entity set unused: {e}")

    # connectivity over entity sets that are actually used
    valid_edges = [(r.row, r.col) for r in schema.relations if r.row in known and r.col in known]
    if used and len(_components(ids, valid_edges)) > 1:
        problems.append("entity-relation graph is disconnected")
    return ValidationReport(tuple(problems))


def _components(nodes: list[int], edges: list[tuple[int, int]]) -> list[set[int]]:
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    groups: dict[int, set[int]] = {}
    for n in nodes:
        groups.setdefault(find(n), set()).add(n)
    return list(groups.values())


def require_valid(schema: Schema) -> None:
    report = validate(schema)
    if not report.ok:
        raise SchemaError("; ".join(report.violations))


def multiview_schema(
    n_views: int,
    d_row: int,
    col_sizes: Sequence[int],
    rank: int = 10,
    likelihoods: Sequence[str] | None = None,
) -> Schema:
    """Views sharing the row entity set 1; view m has columns in set m+1."""
    if n_views < 1:
        raise SchemaError("n_views must be >= 1")
    if len(col_sizes) != n_views:
        raise SchemaError(f"expected {n_views} column sizes, got {len(col_sizes)}")
    if d_row < 1 or any(int(c) < 1 for c in col_sizes):
        raise SchemaError("all sizes must be >= 1")
    liks = list(likelihoods) if likelihoods is not None else ["gaussian"] * n_views
    pairs = [(1, m + 2, liks[m]) for m in range(n_views)]
    names = ["rows"] + [f"view{m + 1}" for m in range(n_views)]
    return Schema.build([d_row, *col_sizes], pairs, rank, names)


def cycle_schema(sizes: Sequence[int], rank: int, likelihood: str = "gaussian") -> Schema:
    """Matrices between set m and set m+1, the last one closing back to set 1.

    A single size gives no cycle to close; that case is the plain two-set
    factorization and expects two sizes.
    """
    n = len(sizes)
    if n < 2:
        raise SchemaError("a cycle needs at least two entity sets")
    if n == 2:
        pairs = [(1, 2, likelihood), (2, 1, likelihood)]
    else:
        pairs = [(m + 1, (m + 1) % n + 1, likelihood) for m in range(n)]
    return Schema.build(sizes, pairs, rank)


def load_schema(path: str | Path) -> Schema:
    with open(path) as fh:
        payload = json.load(fh)
    return Schema.from_dict(payload)


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")
