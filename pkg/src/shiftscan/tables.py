"""Schema-validated tabular observations.

A table couples an attribute schema (name, kind, role per column) with a
pandas frame. Numeric columns are float64 with NaN as the missing marker;
categorical columns are strings with the literal token ``"NA"`` standing
for missing. Tables are treated as immutable after construction and can be
shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import EmptyTableError, ParseError, SchemaError

MISSING = "NA"

KINDS = ("numeric", "categorical")
ROLES = ("feature", "outcome", "timestamp", "identifier")


@dataclass(frozen=True)
class Attribute:
    """One schema entry: a named column with a kind and a role."""

    name: str
    kind: str
    role: str = "feature"

    def __post_init__(self):
        if not self.name:
            raise SchemaError("attribute name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown kind {self.kind!r} for attribute {self.name!r}")
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r} for attribute {self.name!r}")


class TableSchema:
    """Ordered collection of attributes with uniqueness and outcome rules.

    Invariants enforced at construction: names are unique and at most one
    attribute carries the outcome role.
    """

    def __init__(self, attributes):
        attributes = [a if isinstance(a, Attribute) else Attribute(**a) for a in attributes]
        names = [a.name for a in attributes]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate attribute names: {sorted(dupes)}")
        outcomes = [a for a in attributes if a.role == "outcome"]
        if len(outcomes) > 1:
            raise SchemaError(f"more than one outcome attribute: {[a.name for a in outcomes]}")
        self.attributes = tuple(attributes)
        self._by_name = {a.name: a for a in attributes}

    def __iter__(self):
        return iter(self.attributes)

    def __len__(self):
        return len(self.attributes)

    def __getitem__(self, name: str) -> Attribute:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"no attribute named {name!r} in schema") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __eq__(self, other):
        return isinstance(other, TableSchema) and self.attributes == other.attributes

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def outcome(self) -> Attribute | None:
        for a in self.attributes:
            if a.role == "outcome":
                return a
        return None

    @property
    def timestamp(self) -> Attribute | None:
        for a in self.attributes:
            if a.role == "timestamp":
                return a
        return None

    @property
    def identifier(self) -> Attribute | None:
        for a in self.attributes:
            if a.role == "identifier":
                return a
        return None

    def feature_names(self, kind=None) -> list[str]:
        """Names of role=feature attributes, optionally filtered by kind."""
        return [a.name for a in self.attributes if a.role == "feature" and (kind is None or a.kind == kind)]

    def replace_kind(self, names, kind: str) -> "TableSchema":
        """New schema with the given attributes switched to another kind."""
        names = set(names)
        return TableSchema(
            [Attribute(a.name, kind if a.name in names else a.kind, a.role) for a in self.attributes]
        )

    def to_json(self) -> list[dict]:
        return [{"name": a.name, "kind": a.kind, "role": a.role} for a in self.attributes]

    @classmethod
    def from_json(cls, doc) -> "TableSchema":
        if not isinstance(doc, list):
            raise SchemaError("schema document must be a JSON array of {name, kind, role} objects")
        return cls([Attribute(d["name"], d["kind"], d.get("role", "feature")) for d in doc])


def load_schema(path) -> TableSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return TableSchema.from_json(json.load(fh))


def save_schema(schema: TableSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


class ObservationTable:
    """Immutable rows validated against a :class:`TableSchema`.

    Every schema attribute is present as a full column; numeric values are
    finite or NaN (missing), categorical values are non-empty tokens with
    ``"NA"`` for missing.
    """

    def __init__(self, schema: TableSchema, df: pd.DataFrame, validate: bool = True):
        self.schema = schema
        df = df.loc[:, schema.names].reset_index(drop=True)
        if validate:
            df = _coerce_frame(schema, df)
        self.df = df

    def __len__(self) -> int:
        return len(self.df)

    @property
    def n_rows(self) -> int:
        return len(self.df)

    @property
    def record_ids(self) -> list[str]:
        """Stable per-row identifiers: the identifier column if declared, else row position."""
        ident = self.schema.identifier
        if ident is not None:
            return [str(v) for v in self.df[ident.name]]
        return [str(i) for i in range(len(self.df))]

    def column(self, name: str) -> np.ndarray:
        if name not in self.schema:
            raise SchemaError(f"no attribute named {name!r} in schema")
        return self.df[name].to_numpy()

    def select_rows(self, indexer) -> "ObservationTable":
        """Subset of rows (positions or boolean mask), order preserved."""
        return ObservationTable(self.schema, self.df.iloc[np.asarray(indexer)].reset_index(drop=True), validate=False)

    def head(self, n: int) -> "ObservationTable":
        return self.select_rows(np.arange(min(n, len(self.df))))


def _coerce_frame(schema: TableSchema, df: pd.DataFrame) -> pd.DataFrame:
    out = {}
    for attr in schema:
        col = df[attr.name]
        if attr.kind == "numeric":
            values = pd.to_numeric(col, errors="coerce").astype(np.float64)
            if np.isinf(values.to_numpy()).any():
                bad = int(np.flatnonzero(np.isinf(values.to_numpy()))[0]) + 1
                raise ParseError(f"attribute {attr.name!r}: non-finite value (row {bad})")
            raw = col.astype("string")
            failed = values.isna() & ~raw.isin([MISSING, ""]) & ~raw.isna()
            if failed.any():
                row = int(np.flatnonzero(failed.to_numpy())[0]) + 1
                raise ParseError(
                    f"attribute {attr.name!r}: cannot parse {col.iloc[row - 1]!r} as numeric (row {row})"
                )
            out[attr.name] = values.to_numpy()
        else:
            tokens = col.astype("string").fillna(MISSING).replace("", MISSING)
            out[attr.name] = tokens.astype(object).to_numpy()
    return pd.DataFrame(out, columns=schema.names)


def load_table(source, schema: TableSchema) -> ObservationTable:
    """Parse CSV (path or file-like) into a validated table.

    The header must name every schema attribute; extra columns are ignored.
    Raises :class:`SchemaError` for missing columns, :class:`ParseError`
    for unparseable numerics (citing the 1-based data row), and
    :class:`EmptyTableError` for a header-only file.
    """
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyTableError("CSV source has no content") from None
    missing = [n for n in schema.names if n not in df.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    if len(df) == 0:
        raise EmptyTableError("CSV body is empty (header only)")
    return ObservationTable(schema, df)


def save_table(table: ObservationTable, path) -> None:
    """Write CSV with shortest round-trip float formatting and "NA" markers."""
    df = table.df.copy()
    for attr in table.schema:
        if attr.kind == "numeric":
            col = df[attr.name]
            df[attr.name] = np.where(col.isna(), MISSING, col.map(repr))
    df.to_csv(path, index=False)


def concat_tables(tables) -> ObservationTable:
    tables = list(tables)
    if not tables:
        raise EmptyTableError("nothing to concatenate")
    schema = tables[0].schema
    for t in tables[1:]:
        if t.schema != schema:
            raise SchemaError("cannot concatenate tables with different schemas")
    df = pd.concat([t.df for t in tables], ignore_index=True)
    return ObservationTable(schema, df, validate=False)


def split_by_timestamp(table: ObservationTable, boundary) -> tuple[ObservationTable, ObservationTable]:
    """Split rows into (strictly before boundary, at/after boundary).

    Requires a role=timestamp attribute holding ISO-8601 values. Row order
    is preserved within each part.
    """
    ts_attr = table.schema.timestamp
    if ts_attr is None:
        raise SchemaError("schema has no timestamp attribute")
    try:
        stamps = pd.to_datetime(table.df[ts_attr.name], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise ParseError(f"attribute {ts_attr.name!r}: unparseable timestamp ({exc})") from None
    try:
        cut = pd.Timestamp(boundary)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"unparseable boundary {boundary!r} ({exc})") from None
    before = (stamps < cut).to_numpy()
    return table.select_rows(before), table.select_rows(~before)
