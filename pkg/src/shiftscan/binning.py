"""Quantile discretization of numeric attributes.

The subset scanner consumes categorical data only, so numeric attributes
are cut at empirical quantiles of the training table (quartiles by
default) and replaced by tokens ``"b0"``, ``"b1"``, ... Bins are half-open
on the left and closed on the right at each edge; values above the top
edge fall in the last bin, so test data can never land outside the vocab.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import EmptyTableError, FitError, SchemaError
from .tables import MISSING, ObservationTable


def bin_token(index: int) -> str:
    return f"b{index}"


def bin_index(edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Map values to bin positions for the given ascending edges.

    ``k`` edges induce ``k+1`` bins; bin ``i`` covers (edge[i-1], edge[i]]
    with the first bin open below and the last bin open above.
    """
    return np.searchsorted(np.asarray(edges, dtype=float), np.asarray(values, dtype=float), side="left")


class QuantileBinner(BaseEstimator, TransformerMixin):
    """Discretize numeric table attributes at training quantiles.

    Parameters
    ----------
    n_bins : int
        Requested number of quantile bins (>= 2). Duplicate quantile
        edges are merged, so heavy-tailed or constant columns may end up
        with fewer categories.
    attributes : list of str, optional
        Numeric attributes to bin. Defaults to every numeric
        role=feature attribute of the fitted table.
    """

    def __init__(self, n_bins: int = 4, attributes=None):
        self.n_bins = n_bins
        self.attributes = attributes

    def fit(self, table: ObservationTable, y=None):
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        if len(table) == 0:
            raise EmptyTableError("cannot fit bins on an empty table")
        attrs = self.attributes
        if attrs is None:
            attrs = table.schema.feature_names(kind="numeric")
        edges = {}
        for name in attrs:
            if table.schema[name].kind != "numeric":
                raise SchemaError(f"attribute {name!r} is not numeric")
            values = table.column(name)
            values = values[~np.isnan(values)]
            if values.size == 0:
                raise FitError(f"attribute {name!r} has no non-missing values")
            qs = np.quantile(values, np.arange(1, self.n_bins) / self.n_bins, method="linear")
            cuts = np.unique(qs)
            # an edge at the sample maximum would create a bin empty on
            # training data; dropping it merges the degenerate top bin
            cuts = cuts[cuts < values.max()]
            edges[name] = cuts
        self.edges_ = edges
        return self

    def transform(self, table: ObservationTable) -> ObservationTable:
        """Return a table with fitted attributes replaced by bin tokens.

        Missing values map to the dedicated ``"NA"`` token; other
        attributes pass through unchanged.
        """
        if not hasattr(self, "edges_"):
            raise FitError("QuantileBinner is not fitted")
        if len(table) == 0:
            return ObservationTable(table.schema.replace_kind(self.edges_, "categorical"), table.df, validate=False)
        df = table.df.copy()
        for name, cuts in self.edges_.items():
            if name not in table.schema:
                raise SchemaError(f"table lacks binned attribute {name!r}")
            values = table.column(name)
            idx = bin_index(cuts, np.nan_to_num(values, nan=0.0))
            tokens = np.array([bin_token(i) for i in range(len(cuts) + 1)], dtype=object)[idx]
            tokens[np.isnan(values)] = MISSING
            df[name] = tokens
        schema = table.schema.replace_kind(self.edges_, "categorical")
        return ObservationTable(schema, df, validate=False)

    def n_categories(self, name: str) -> int:
        return len(self.edges_[name]) + 1

    def to_json(self) -> dict:
        return {name: [float(e) for e in cuts] for name, cuts in self.edges_.items()}

    @classmethod
    def from_json(cls, doc: dict) -> "QuantileBinner":
        binner = cls(attributes=sorted(doc))
        binner.edges_ = {name: np.asarray(cuts, dtype=float) for name, cuts in doc.items()}
        return binner

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "QuantileBinner":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
