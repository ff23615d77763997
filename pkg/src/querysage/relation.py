"""Columnar relation store: schema, loading, cataloging, appends.

A Relation is a single denormalized table held column-major in numpy
arrays. It is immutable after construction; append_rows returns a new
logical version. The AttributeCatalog (exact per-column extrema and
categorical domains) drives every unconstrained-predicate default in
the covariance kernel.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

ROLE_DIMENSION = "dimension"
ROLE_MEASURE = "measure"
KIND_NUMERIC = "numeric"
KIND_CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Attribute:
    name: str
    role: str
    kind: str

    def __post_init__(self) -> None:
        if self.role not in (ROLE_DIMENSION, ROLE_MEASURE):
            raise SchemaError(f"unknown role {self.role!r} for {self.name!r}")
        if self.kind not in (KIND_NUMERIC, KIND_CATEGORICAL):
            raise SchemaError(f"unknown kind {self.kind!r} for {self.name!r}")
        if self.role == ROLE_MEASURE and self.kind != KIND_NUMERIC:
            # measures appear inside aggregate functions; categorical ones never do
            raise SchemaError(f"measure {self.name!r} must be numeric")


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        if not any(a.role == ROLE_DIMENSION for a in self.attributes):
            raise SchemaError("schema needs at least one dimension attribute")
        if not any(a.role == ROLE_MEASURE for a in self.attributes):
            raise SchemaError("schema needs at least one measure attribute")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"no attribute named {name!r}")

    def has(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    @property
    def dimensions(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.role == ROLE_DIMENSION)

    @property
    def measures(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.role == ROLE_MEASURE)

    @property
    def numeric_dimensions(self) -> tuple[str, ...]:
        return tuple(
            a.name for a in self.attributes
            if a.role == ROLE_DIMENSION and a.kind == KIND_NUMERIC
        )

    @property
    def categorical_dimensions(self) -> tuple[str, ...]:
        return tuple(
            a.name for a in self.attributes
            if a.role == ROLE_DIMENSION and a.kind == KIND_CATEGORICAL
        )

    def is_numeric(self, name: str) -> bool:
        return self.attribute(name).kind == KIND_NUMERIC

    def to_json(self) -> str:
        return json.dumps(
            [{"name": a.name, "role": a.role, "kind": a.kind} for a in self.attributes]
        )

    @classmethod
    def from_json(cls, text: str) -> "Schema":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema JSON invalid: {exc}") from exc
        if not isinstance(raw, list):
            raise SchemaError("schema JSON must be a list of attribute objects")
        attrs = []
        for item in raw:
            try:
                attrs.append(Attribute(item["name"], item["role"], item["kind"]))
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"bad schema entry {item!r}") from exc
        return cls(tuple(attrs))

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        p = Path(path)
        if not p.exists():
            raise DataError(f"schema file not found: {p}")
        return cls.from_json(p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class AttributeCatalog:
    """Exact column statistics used as unconstrained-predicate defaults."""

    numeric: Mapping[str, tuple[float, float]]
    categorical: Mapping[str, tuple[str, ...]]
    cardinality: int

    def extent(self, attr: str) -> tuple[float, float]:
        try:
            return self.numeric[attr]
        except KeyError:
            raise DataError(f"no numeric extent cataloged for {attr!r}")

    def domain(self, attr: str) -> tuple[str, ...]:
        try:
            return self.categorical[attr]
        except KeyError:
            raise DataError(f"no categorical domain cataloged for {attr!r}")


class Relation:
    """Immutable columnar table plus its version id.

    Columns are numpy arrays: float64 for numeric attributes, unicode for
    categorical ones. Versions start at 0 and advance by one per append.
    """

    def __init__(self, schema: Schema, columns: Mapping[str, np.ndarray],
                 version: int = 0):
        lengths = {len(v) for v in columns.values()}
        if set(columns) != set(schema.names):
            raise SchemaError("columns do not match schema attribute names")
        if len(lengths) > 1:
            raise DataError("ragged columns: unequal lengths")
        self.schema = schema
        self.columns = {name: np.asarray(col) for name, col in columns.items()}
        for attr in schema.attributes:
            col = self.columns[attr.name]
            if attr.kind == KIND_NUMERIC:
                col = col.astype(np.float64, copy=False)
                if col.size and not np.all(np.isfinite(col)):
                    raise DataError(f"non-finite value in numeric column {attr.name!r}")
            else:
                col = col.astype(str, copy=False)
            self.columns[attr.name] = col
        self.version = version

    @property
    def row_count(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def take(self, indices: np.ndarray) -> dict[str, np.ndarray]:
        return {name: col[indices] for name, col in self.columns.items()}

    def equals(self, other: "Relation") -> bool:
        if self.schema != other.schema or self.row_count != other.row_count:
            return False
        for attr in self.schema.attributes:
            a, b = self.columns[attr.name], other.columns[attr.name]
            if attr.kind == KIND_NUMERIC:
                if not np.allclose(a, b, rtol=0, atol=0):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[Mapping[str, object]],
                  version: int = 0) -> "Relation":
        cols: dict[str, list] = {name: [] for name in schema.names}
        for row in rows:
            for name in schema.names:
                cols[name].append(row[name])
        arrays = {}
        for attr in schema.attributes:
            if attr.kind == KIND_NUMERIC:
                arrays[attr.name] = np.array(cols[attr.name], dtype=np.float64)
            else:
                arrays[attr.name] = np.array(cols[attr.name], dtype=str)
        if not rows:
            for attr in schema.attributes:
                dtype = np.float64 if attr.kind == KIND_NUMERIC else str
                arrays[attr.name] = np.array([], dtype=dtype)
        return cls(schema, arrays, version)


def load_csv(path: str | Path, schema: Schema) -> Relation:
    """Read a CSV file (comma, header row, UTF-8) into a Relation.

    The header must match the schema names exactly (same set, any order).
    Numeric cells must parse as finite reals; failures report the 1-based
    data line number. A header-only file is an error ("empty relation").
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"CSV file not found: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{p}: empty file, no header")
        if set(header) != set(schema.names) or len(header) != len(schema.names):
            raise DataError(
                f"{p}: header {header!r} does not match schema names {list(schema.names)!r}"
            )
        kind_by_name = {a.name: a.kind for a in schema.attributes}
        cols: dict[str, list] = {name: [] for name in header}
        for lineno, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{p}: malformed row at data line {lineno}: "
                                f"{len(row)} fields, expected {len(header)}")
            for name, cell in zip(header, row):
                if kind_by_name[name] == KIND_NUMERIC:
                    try:
                        val = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{p}: non-numeric value {cell!r} for {name!r} "
                            f"at data line {lineno}"
                        )
                    if not math.isfinite(val):
                        raise DataError(
                            f"{p}: non-finite value {cell!r} for {name!r} "
                            f"at data line {lineno}"
                        )
                    cols[name].append(val)
                else:
                    cols[name].append(cell)
    if not next(iter(cols.values()), []):
        raise DataError(f"{p}: empty relation (header only)")
    arrays = {}
    for attr in schema.attributes:
        if attr.kind == KIND_NUMERIC:
            arrays[attr.name] = np.array(cols[attr.name], dtype=np.float64)
        else:
            arrays[attr.name] = np.array(cols[attr.name], dtype=str)
    return Relation(schema, arrays)


def write_csv(relation: Relation, path: str | Path) -> None:
    """Write the relation back out in the load_csv dialect (round-trips)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(relation.schema.names)
        names = relation.schema.names
        kinds = {a.name: a.kind for a in relation.schema.attributes}
        cols = [relation.columns[n] for n in names]
        for i in range(relation.row_count):
            writer.writerow(
                [repr(float(c[i])) if kinds[n] == KIND_NUMERIC else str(c[i])
                 for n, c in zip(names, cols)]
            )


def catalog(relation: Relation) -> AttributeCatalog:
    """Exact extrema / distinct sets for every dimension attribute.

    Measure attributes are deliberately absent: predicate regions (and
    the kernel geometry built on them) live in dimension space only.
    """
    if relation.row_count == 0:
        raise DataError("empty relation: catalog undefined")
    numeric: dict[str, tuple[float, float]] = {}
    categorical: dict[str, tuple[str, ...]] = {}
    for attr in relation.schema.attributes:
        if attr.role != ROLE_DIMENSION:
            continue
        col = relation.columns[attr.name]
        if attr.kind == KIND_NUMERIC:
            numeric[attr.name] = (float(col.min()), float(col.max()))
        else:
            categorical[attr.name] = tuple(sorted(np.unique(col).tolist()))
    return AttributeCatalog(numeric, categorical, relation.row_count)


def append_rows(relation: Relation, batch: Relation) -> tuple[Relation, tuple[int, int]]:
    """Concatenate a batch onto a relation, producing the next version.

    Returns the new Relation and the (|r|, |r^a|) counts the append
    adjuster needs. An empty batch still returns a same-version relation
    copy with counts (|r|, 0).
    """
    if batch.schema != relation.schema:
        raise SchemaError("append batch schema does not match relation schema")
    n_old, n_new = relation.row_count, batch.row_count
    if n_new == 0:
        return relation, (n_old, 0)
    merged = {
        name: np.concatenate([relation.columns[name], batch.columns[name]])
        for name in relation.schema.names
    }
    return Relation(relation.schema, merged, relation.version + 1), (n_old, n_new)
