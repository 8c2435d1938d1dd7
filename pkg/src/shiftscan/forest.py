"""Honest causal forest for conditional average treatment effects.

Each tree splits a structure half-sample greedily to maximize the
heterogeneity criterion (n_L n_R / n) * (tau_L - tau_R)^2, where tau is
the treated-minus-control mean difference, then populates its leaves
from a disjoint estimation half (honesty). Trees are grouped into
little bags sharing a common half-sample; the spread between and within
groups yields a sampling-variance estimate for each prediction
(bootstrap of little bags), from which normal-quantile confidence
intervals and positive / negative / none shift labels follow.

Arm differences are evaluated as (S1*n0 - S0*n1) / (n1*n0) in a single
division so that adding a constant to integer-valued outcomes cancels
exactly in float arithmetic: estimates are bit-identical under outcome
shifts and scale exactly under power-of-two outcome scalings.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from .errors import FitError, SchemaError
from .tables import MISSING, ObservationTable

LABELS = ("positive", "negative", "none")


def _worker_count(n_jobs) -> int:
    if n_jobs is not None:
        return int(n_jobs)
    return int(os.environ.get("SHIFTSCAN_WORKERS", "1"))


def _arm_difference(s1, n1, s0, n0):
    # single-division form; exactly shift-invariant for integer outcomes
    return (s1 * n0 - s0 * n1) / (n1 * n0)


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    subsample: np.ndarray
    structure: np.ndarray
    estimation: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        nodes = np.zeros(X.shape[0], dtype=int)
        while True:
            internal = self.feature[nodes] >= 0
            if not internal.any():
                return nodes
            idx = np.flatnonzero(internal)
            cur = nodes[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            nodes[idx] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _grow_tree(X, y, d, half_sample, size, min_arm_leaf, max_depth, mtry, seed):
    rng = np.random.default_rng(seed)
    sub = rng.choice(half_sample, size=size, replace=False)
    perm = rng.permutation(sub)
    n_struct = size - size // 2
    struct, est = perm[:n_struct], perm[n_struct:]

    feature, threshold, left, right = [], [], [], []
    leaf_struct_rows = {}

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        return len(feature) - 1

    k = min_arm_leaf
    stack = [(new_node(), struct, 0)]
    while stack:
        node, rows, depth = stack.pop()
        dx = d[rows]
        n1 = int(dx.sum())
        n0 = rows.size - n1
        split = None
        if depth < max_depth and n1 >= 2 * k and n0 >= 2 * k:
            split = _best_split(X, y, dx, rows, n1, n0, k, rng.choice(X.shape[1], size=mtry, replace=False))
        if split is None:
            leaf_struct_rows[node] = rows
            continue
        f, thr = split
        mask = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        l_id, r_id = new_node(), new_node()
        left[node], right[node] = l_id, r_id
        stack.append((l_id, rows[mask], depth + 1))
        stack.append((r_id, rows[~mask], depth + 1))

    tree = _Tree(
        np.asarray(feature), np.asarray(threshold), np.asarray(left), np.asarray(right),
        np.full(len(feature), np.nan), np.sort(sub), np.sort(struct), np.sort(est),
    )
    _populate_leaves(tree, X, y, d, struct, est, k)
    return tree


def _best_split(X, y, dx, rows, n1, n0, k, features):
    yx = y[rows]
    s1_tot = float((yx * dx).sum())
    s0_tot = float((yx * (1 - dx)).sum())
    best = None
    best_gain = 0.0
    n = rows.size
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        cut = np.flatnonzero(xs_sorted[1:] > xs_sorted[:-1]) + 1
        if cut.size == 0:
            continue
        d_sorted = dx[order].astype(float)
        yd_sorted = yx[order] * d_sorted
        yc_sorted = yx[order] * (1.0 - d_sorted)
        t_l = np.cumsum(d_sorted)[cut - 1]
        c_l = cut - t_l
        s1_l = np.cumsum(yd_sorted)[cut - 1]
        s0_l = np.cumsum(yc_sorted)[cut - 1]
        t_r = n1 - t_l
        c_r = n0 - c_l
        valid = (t_l >= k) & (c_l >= k) & (t_r >= k) & (c_r >= k)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_l = _arm_difference(s1_l, t_l, s0_l, c_l)
            tau_r = _arm_difference(s1_tot - s1_l, t_r, s0_tot - s0_l, c_r)
            gain = (cut * (n - cut) / n) * (tau_l - tau_r) ** 2
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best = (int(f), float((xs_sorted[cut[i] - 1] + xs_sorted[cut[i]]) / 2.0))
    return best


def _populate_leaves(tree, X, y, d, struct, est, k):
    # route estimation rows, collecting arm sums at every node on the path
    n_nodes = tree.feature.size
    s1 = np.zeros(n_nodes)
    s0 = np.zeros(n_nodes)
    c1 = np.zeros(n_nodes, dtype=int)
    c0 = np.zeros(n_nodes, dtype=int)
    parent = np.full(n_nodes, -1, dtype=int)
    for node in range(n_nodes):
        if tree.feature[node] >= 0:
            parent[tree.left[node]] = node
            parent[tree.right[node]] = node

    stack = [(0, est)]
    while stack:
        node, rows = stack.pop()
        dx = d[rows]
        yx = y[rows]
        c1[node] = int(dx.sum())
        c0[node] = rows.size - c1[node]
        s1[node] = float((yx * dx).sum())
        s0[node] = float((yx * (1 - dx)).sum())
        if tree.feature[node] >= 0:
            mask = X[rows, tree.feature[node]] <= tree.threshold[node]
            stack.append((tree.left[node], rows[mask]))
            stack.append((tree.right[node], rows[~mask]))

    # fallback chain: nearest ancestor with k per arm, then the root with
    # any data in both arms, then the tree subsample difference
    d_sub = d[tree.subsample]
    y_sub = y[tree.subsample]
    ns1 = int(d_sub.sum())
    ns0 = d_sub.size - ns1
    global_diff = _arm_difference(float((y_sub * d_sub).sum()), ns1, float((y_sub * (1 - d_sub)).sum()), ns0)

    for node in range(n_nodes):
        if tree.feature[node] >= 0:
            continue
        cur = node
        while cur >= 0 and not (c1[cur] >= k and c0[cur] >= k):
            cur = parent[cur]
        if cur < 0:
            cur = 0 if (c1[0] >= 1 and c0[0] >= 1) else -1
        tree.value[node] = _arm_difference(s1[cur], c1[cur], s0[cur], c0[cur]) if cur >= 0 else global_diff


@dataclass
class CateEstimate:
    """Vectorized per-record effect estimates and shift labels.

    ``label`` is "positive" iff the confidence interval lies above 0,
    "negative" iff below, and "none" otherwise.
    """

    tau_hat: np.ndarray
    variance: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    label: np.ndarray

    def fractions(self) -> dict:
        n = max(self.label.size, 1)
        return {lab: float((self.label == lab).sum()) / n for lab in LABELS}


class CausalForest(BaseEstimator):
    """Honest causal forest with little-bag confidence intervals.

    Parameters
    ----------
    n_trees : int
        Number of trees B (>= 2).
    subsample_fraction : float
        Per-tree subsample size as a fraction of N, drawn inside the
        group's half-sample (values above 0.5 are clamped by the
        half-sample size).
    min_arm_leaf : int
        Minimum treated and control estimation records a leaf needs to
        report its own estimate; leaves below fall back to the nearest
        valid ancestor.
    max_depth : int
    mtry : int, optional
        Features sampled per split; default ceil(sqrt(m)).
    group_size : int
        Trees per little bag (shared half-sample).
    min_arm_size : int
        Minimum records per treatment arm required to fit at all.
    seed : int
    n_jobs : int, optional
        Tree-growing workers; defaults to the SHIFTSCAN_WORKERS
        environment variable or 1. Results are identical for any value.
    """

    def __init__(self, n_trees: int = 200, subsample_fraction: float = 0.5,
                 min_arm_leaf: int = 5, max_depth: int = 10, mtry=None,
                 group_size: int = 4, min_arm_size: int = 10, seed: int = 0, n_jobs=None):
        self.n_trees = n_trees
        self.subsample_fraction = subsample_fraction
        self.min_arm_leaf = min_arm_leaf
        self.max_depth = max_depth
        self.mtry = mtry
        self.group_size = group_size
        self.min_arm_size = min_arm_size
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y, d):
        X = np.ascontiguousarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.asarray(d)
        if X.ndim != 2 or X.shape[0] != y.size or y.size != d.size:
            raise ValueError("X, y, d must have matching first dimensions")
        if not np.isfinite(X).all():
            raise FitError("covariates must be finite")
        if not np.isfinite(y).all():
            raise FitError("outcomes must be finite")
        if not np.isin(d, (0, 1)).all():
            raise FitError("treatment indicator must be binary 0/1")
        d = d.astype(np.int64)
        n = y.size
        n_treated = int(d.sum())
        if min(n_treated, n - n_treated) < self.min_arm_size:
            raise FitError(
                f"each treatment arm needs >= {self.min_arm_size} records "
                f"(got {n_treated} treated, {n - n_treated} control)"
            )
        if self.n_trees < 2 or not 0 < self.subsample_fraction <= 1:
            raise ValueError("need n_trees >= 2 and subsample_fraction in (0, 1]")

        mtry = self.mtry if self.mtry is not None else int(np.ceil(np.sqrt(X.shape[1])))
        mtry = min(max(1, mtry), X.shape[1])
        n_groups = -(-self.n_trees // self.group_size)
        half_size = max(2, n // 2)
        size = min(max(2, int(round(self.subsample_fraction * n))), half_size)

        halves = []
        for g in range(n_groups):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed & 0xFFFFFFFF, 1, g]))
            halves.append(rng.choice(n, size=half_size, replace=False))

        seeds = [np.random.SeedSequence([self.seed & 0xFFFFFFFF, 2, b]) for b in range(self.n_trees)]
        jobs = _worker_count(self.n_jobs)
        self.trees_ = list(Parallel(n_jobs=jobs)(
            delayed(_grow_tree)(X, y, d, halves[b // self.group_size], size,
                                self.min_arm_leaf, self.max_depth, mtry, seeds[b])
            for b in range(self.n_trees)
        ))
        self.group_of_tree_ = np.arange(self.n_trees) // self.group_size
        self.n_features_in_ = X.shape[1]
        return self

    def _tree_predictions(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must have {self.n_features_in_} columns, got shape {X.shape}")
        out = np.empty((X.shape[0], len(self.trees_)))
        for b, tree in enumerate(self.trees_):
            out[:, b] = tree.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        """Mean treatment-effect estimate per row."""
        return self._tree_predictions(X).mean(axis=1)

    def predict_cate(self, X, alpha: float = 0.05) -> CateEstimate:
        """Effects with little-bag variance, CIs, and shift labels."""
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        preds = self._tree_predictions(X)
        tau = preds.mean(axis=1)
        variance = self._little_bag_variance(preds)
        z = NormalDist().inv_cdf(1 - alpha / 2)
        half = z * np.sqrt(variance)
        lo, hi = tau - half, tau + half
        label = np.full(tau.size, "none", dtype=object)
        label[lo > 0] = "positive"
        label[hi < 0] = "negative"
        return CateEstimate(tau, variance, lo, hi, label)

    def _little_bag_variance(self, preds: np.ndarray) -> np.ndarray:
        # between-group variance of little-bag means, debiased by the
        # within-group tree noise. The raw difference is floored at a
        # fraction of the between-group variance rather than at 0: with
        # ~B/group_size groups the difference estimator's sampling noise
        # exceeds the half-sample signal for a sizeable share of points,
        # and a hard zero floor collapses their intervals to points,
        # destroying null calibration of the labels.
        groups = self.group_of_tree_
        n_groups = int(groups.max()) + 1
        if n_groups < 2:
            return np.zeros(preds.shape[0])
        means = np.empty((preds.shape[0], n_groups))
        within = np.zeros(preds.shape[0])
        n_within = 0
        for g in range(n_groups):
            block = preds[:, groups == g]
            means[:, g] = block.mean(axis=1)
            if block.shape[1] >= 2:
                within += block.var(axis=1, ddof=1)
                n_within += 1
        between = means.var(axis=1, ddof=1)
        corrected = between
        if n_within:
            corrected = between - within / n_within / self.group_size
        return np.maximum(corrected, 0.25 * between)


class FeatureEncoder:
    """Table-to-matrix featurization shared by training and scoring.

    Numeric features pass through (missing imputed with the training
    median); categorical features are one-hot encoded over the category
    vocabulary observed at fit time.
    """

    def fit(self, tables, features) -> "FeatureEncoder":
        tables = list(tables)
        schema = tables[0].schema
        self.features_ = list(features)
        self.columns_ = []
        self.medians_ = {}
        self.categories_ = {}
        for name in self.features_:
            attr = schema[name]
            if attr.kind == "numeric":
                stacked = np.concatenate([t.column(name) for t in tables])
                good = stacked[~np.isnan(stacked)]
                self.medians_[name] = float(np.median(good)) if good.size else 0.0
                self.columns_.append(name)
            else:
                cats = sorted({str(v) for t in tables for v in t.column(name)})
                self.categories_[name] = cats
                self.columns_.extend(f"{name}={c}" for c in cats)
        return self

    def transform(self, table: ObservationTable) -> np.ndarray:
        cols = []
        for name in self.features_:
            if name in self.medians_:
                values = table.column(name).astype(float)
                values = np.where(np.isnan(values), self.medians_[name], values)
                cols.append(values)
            else:
                tokens = table.column(name)
                for cat in self.categories_[name]:
                    cols.append((tokens == cat).astype(float))
        return np.column_stack(cols) if cols else np.empty((len(table), 0))


@dataclass
class TreatmentData:
    """Covariates, outcome, and treatment indicator ready for the forest."""

    X: np.ndarray
    y: np.ndarray
    d: np.ndarray
    feature_names: list[str]
    encoder: FeatureEncoder
    n_dropped: int = 0


def assemble_treatment_data(pre: ObservationTable, post: ObservationTable,
                            outcome: str | None = None, features=None) -> TreatmentData:
    """Stack a control table (D=0) and a treatment table (D=1).

    Outcome values must be binary 0/1; rows with a missing outcome are
    dropped and counted. Categorical features are one-hot encoded over
    both tables' vocabularies.
    """
    if pre.schema != post.schema:
        raise SchemaError("control and treatment tables must share a schema")
    schema = pre.schema
    if outcome is None:
        out_attr = schema.outcome
        if out_attr is None:
            raise SchemaError("schema declares no outcome attribute")
        outcome = out_attr.name
    if outcome not in schema:
        raise SchemaError(f"no attribute named {outcome!r} in schema")
    if features is None:
        features = [n for n in schema.feature_names() if n != outcome]

    def outcome_values(table):
        col = table.column(outcome)
        if schema[outcome].kind == "numeric":
            return col.astype(float)
        tokens = np.asarray(col, dtype=object)
        values = np.full(tokens.shape, np.nan)
        values[tokens == "0"] = 0.0
        values[tokens == "1"] = 1.0
        bad = ~np.isin(tokens, ("0", "1", MISSING))
        if bad.any():
            raise SchemaError(f"outcome {outcome!r} is non-binary: found {tokens[bad][0]!r}")
        return values

    y_parts, keep_parts = [], []
    for table in (pre, post):
        values = outcome_values(table)
        seen = values[~np.isnan(values)]
        if not np.isin(seen, (0.0, 1.0)).all():
            offender = seen[~np.isin(seen, (0.0, 1.0))][0]
            raise SchemaError(f"outcome {outcome!r} is non-binary: found {offender!r}")
        y_parts.append(values)
        keep_parts.append(~np.isnan(values))

    pre_kept = pre.select_rows(np.flatnonzero(keep_parts[0]))
    post_kept = post.select_rows(np.flatnonzero(keep_parts[1]))
    n_dropped = int((~keep_parts[0]).sum() + (~keep_parts[1]).sum())
    if len(pre_kept) == 0 or len(post_kept) == 0:
        raise FitError("one treatment arm is empty")

    encoder = FeatureEncoder().fit([pre_kept, post_kept], features)
    X = np.vstack([encoder.transform(pre_kept), encoder.transform(post_kept)])
    y = np.concatenate([y_parts[0][keep_parts[0]], y_parts[1][keep_parts[1]]])
    d = np.concatenate([np.zeros(len(pre_kept), dtype=int), np.ones(len(post_kept), dtype=int)])
    return TreatmentData(X, y, d, encoder.columns_, encoder, n_dropped)


def classify_table(forest: CausalForest, encoder: FeatureEncoder,
                   table: ObservationTable, alpha: float = 0.05) -> CateEstimate:
    """Per-record effect labels for a table via a fitted forest."""
    if len(table) == 0:
        empty = np.empty(0)
        return CateEstimate(empty, empty.copy(), empty.copy(), empty.copy(), np.empty(0, dtype=object))
    return forest.predict_cate(encoder.transform(table), alpha)
