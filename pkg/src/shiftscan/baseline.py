"""Empirical baseline distributions and p-value ranges.

A fitted baseline tabulates per-attribute category counts on training
data and fixes a total order over categories. A test observation's
category then maps to an empirical p-value *range*: with ``T`` training
rows, ``E`` the training count of the observed category, and ``G`` the
total count of categories strictly later in the order, the range is

    (G / (T+1),  (G + E + 1) / (T+1)]

whose width (E+1)/(T+1) makes a uniform draw inside the range an exact
Uniform(0,1) under exchangeability of the test point with the training
sample. Discrete data makes point p-values non-uniform; ranges restore
the calibration the scan statistic relies on.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EmptyTableError, FitError, SchemaError
from .tables import MISSING, ObservationTable

ORDER_MODES = ("rarity", "value")


@dataclass(frozen=True)
class PRange:
    """Empirical p-value interval for one observed cell."""

    p_min: float
    p_max: float

    def width(self) -> float:
        return self.p_max - self.p_min


def significance_weight(prange: PRange, alpha: float, mode: str = "expectation") -> float:
    """Probability mass of the range lying below the significance level.

    In expectation mode this is the chance a p-value drawn uniformly
    from the range falls below ``alpha``; in deterministic mode the cell
    counts fully iff the whole range sits at or below ``alpha``.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if mode == "deterministic":
        return 1.0 if prange.p_max <= alpha else 0.0
    return float(np.clip((alpha - prange.p_min) / (prange.p_max - prange.p_min), 0.0, 1.0))


class PRangeMatrix:
    """Per (record, attribute) p-value ranges for a test table."""

    def __init__(self, p_min: np.ndarray, p_max: np.ndarray, record_ids, attributes):
        p_min = np.asarray(p_min, dtype=float)
        p_max = np.asarray(p_max, dtype=float)
        if p_min.shape != p_max.shape or p_min.ndim != 2:
            raise ValueError("p_min and p_max must be equal-shape 2-d arrays")
        self.p_min = p_min
        self.p_max = p_max
        self.record_ids = list(record_ids)
        self.attributes = list(attributes)

    @property
    def n_records(self) -> int:
        return self.p_min.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.p_min.shape[1]

    def weights(self, alpha: float, mode: str = "expectation") -> np.ndarray:
        """Significance weights of every cell at level ``alpha``."""
        if mode == "deterministic":
            return (self.p_max <= alpha).astype(float)
        return np.clip((alpha - self.p_min) / (self.p_max - self.p_min), 0.0, 1.0)

    def take_records(self, indices) -> "PRangeMatrix":
        indices = np.asarray(indices)
        return PRangeMatrix(
            self.p_min[indices], self.p_max[indices],
            [self.record_ids[i] for i in indices], self.attributes,
        )

    def to_frame(self):
        """Long-format debug dump: one row per (record, attribute) cell."""
        import pandas as pd

        n, m = self.p_min.shape
        return pd.DataFrame({
            "record_id": np.repeat(self.record_ids, m),
            "attribute": np.tile(self.attributes, n),
            "p_min": self.p_min.ravel(),
            "p_max": self.p_max.ravel(),
        })


def _value_sort_key(token: str):
    # natural order: NA first, then quantile-bin tokens by index, then
    # remaining tokens lexicographically
    if token == MISSING:
        return (0, 0, "")
    m = re.fullmatch(r"b(\d+)", token)
    if m:
        return (1, int(m.group(1)), "")
    return (2, 0, token)


class EmpiricalBaseline(BaseEstimator):
    """Per-attribute training category counts with a fixed anomalousness order.

    Parameters
    ----------
    attributes : list of str, optional
        Categorical attributes to model; defaults to every categorical
        role=feature attribute of the fitted table.
    order : {"rarity", "value"}
        Category order used for the p-value ranges. ``rarity`` sorts by
        ascending training count (ties by token); ``value`` uses the
        natural token order, which for quantile-binned numerics directs
        the scan's one-sided power at high bins.

    Fitted attributes
    -----------------
    counts_ : dict of {attr: dict of {category: int}}
    order_ : dict of {attr: list of category}
    total_ : int, training row count T
    """

    def __init__(self, attributes=None, order: str = "rarity"):
        self.attributes = attributes
        self.order = order

    def fit(self, table: ObservationTable, y=None):
        if self.order not in ORDER_MODES:
            raise ValueError(f"order must be one of {ORDER_MODES}, got {self.order!r}")
        if len(table) == 0:
            raise EmptyTableError("cannot fit a baseline on an empty table")
        attrs = self.attributes
        if attrs is None:
            attrs = table.schema.feature_names(kind="categorical")
        if not attrs:
            raise FitError("no categorical attributes to model (bin numerics first)")
        counts = {}
        orders = {}
        for name in attrs:
            if table.schema[name].kind != "categorical":
                raise SchemaError(f"attribute {name!r} is not categorical (bin numerics first)")
            values, raw = np.unique(table.column(name), return_counts=True)
            cat_counts = {str(v): int(c) for v, c in zip(values, raw)}
            if self.order == "rarity":
                ordered = sorted(cat_counts, key=lambda c: (cat_counts[c], c))
            else:
                ordered = sorted(cat_counts, key=_value_sort_key)
            counts[name] = cat_counts
            orders[name] = ordered
        self.counts_ = counts
        self.order_ = orders
        self.total_ = len(table)
        self._index()
        return self

    def _index(self):
        # G per category = total count of categories strictly later in the
        # order ("less anomalous"); unseen categories sort first, so G = T
        self._g = {}
        self._lookup = {}
        for name, ordered in self.order_.items():
            c = np.array([self.counts_[name][cat] for cat in ordered], dtype=float)
            tail = np.concatenate([np.cumsum(c[::-1])[::-1][1:], [0.0]])
            self._g[name] = tail
            self._lookup[name] = {cat: i for i, cat in enumerate(ordered)}

    @property
    def attribute_names(self) -> list[str]:
        return list(self.order_)

    def p_range(self, attr: str, value) -> PRange:
        """Empirical p-value range of one observed category.

        Unseen categories get E = 0 and sort before everything, hence the
        extreme range (T/(T+1), 1].
        """
        if not hasattr(self, "counts_"):
            raise FitError("EmpiricalBaseline is not fitted")
        if attr not in self.counts_:
            raise SchemaError(f"baseline has no attribute {attr!r}")
        t1 = self.total_ + 1
        pos = self._lookup[attr].get(str(value))
        if pos is None:
            g, e = float(self.total_), 0.0
        else:
            g, e = self._g[attr][pos], self.counts_[attr][str(value)]
        return PRange(g / t1, (g + e + 1) / t1)

    def transform(self, table: ObservationTable) -> PRangeMatrix:
        """P-value ranges for every (record, modelled attribute) cell."""
        if not hasattr(self, "counts_"):
            raise FitError("EmpiricalBaseline is not fitted")
        missing = [a for a in self.counts_ if a not in table.schema]
        if missing:
            raise SchemaError(f"test table lacks attribute(s): {', '.join(missing)}")
        n = len(table)
        attrs = self.attribute_names
        p_min = np.empty((n, len(attrs)))
        p_max = np.empty((n, len(attrs)))
        t1 = self.total_ + 1
        for j, name in enumerate(attrs):
            lookup = self._lookup[name]
            gs = self._g[name]
            cnts = self.counts_[name]
            ordered = self.order_[name]
            column = table.column(name)
            cats, inverse = np.unique(column, return_inverse=True)
            g_per_cat = np.empty(len(cats))
            e_per_cat = np.empty(len(cats))
            for k, cat in enumerate(cats):
                pos = lookup.get(str(cat))
                if pos is None:
                    g_per_cat[k], e_per_cat[k] = float(self.total_), 0.0
                else:
                    g_per_cat[k], e_per_cat[k] = gs[pos], cnts[ordered[pos]]
            p_min[:, j] = g_per_cat[inverse] / t1
            p_max[:, j] = (g_per_cat[inverse] + e_per_cat[inverse] + 1) / t1
        return PRangeMatrix(p_min, p_max, table.record_ids, attrs)

    def sample_null(self, n: int, rng: np.random.Generator) -> PRangeMatrix:
        """P-range matrix of ``n`` records drawn i.i.d. from the training
        empirical distribution, attributes independent.

        Used by the randomization test; categories are sampled directly so
        no table is materialized.
        """
        attrs = self.attribute_names
        p_min = np.empty((n, len(attrs)))
        p_max = np.empty((n, len(attrs)))
        t1 = self.total_ + 1
        for j, name in enumerate(attrs):
            ordered = self.order_[name]
            c = np.array([self.counts_[name][cat] for cat in ordered], dtype=float)
            draws = rng.choice(len(ordered), size=n, p=c / c.sum())
            g = self._g[name][draws]
            e = c[draws]
            p_min[:, j] = g / t1
            p_max[:, j] = (g + e + 1) / t1
        return PRangeMatrix(p_min, p_max, [str(i) for i in range(n)], attrs)

    def to_json(self) -> dict:
        return {
            "total": self.total_,
            "order_mode": self.order,
            "attributes": {
                name: {"counts": self.counts_[name], "order": self.order_[name]}
                for name in self.order_
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EmpiricalBaseline":
        model = cls(attributes=sorted(doc["attributes"]), order=doc.get("order_mode", "rarity"))
        model.counts_ = {name: dict(entry["counts"]) for name, entry in doc["attributes"].items()}
        model.order_ = {name: list(entry["order"]) for name, entry in doc["attributes"].items()}
        model.total_ = int(doc["total"])
        model._index()
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EmpiricalBaseline":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
