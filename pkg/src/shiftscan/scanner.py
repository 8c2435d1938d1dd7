"""Subset scanning over p-value range matrices.

The scanner maximizes a Berk-Jones scan statistic over subsets
S = R x A of test records and attributes. For a significance level
``alpha`` let ``n_alpha`` be the (expectation-weighted) number of cell
p-values in S below ``alpha`` and ``n = |R| * |A|``; the score is

    F_alpha(S) = n * KL(n_alpha/n || alpha)   if n_alpha/n > alpha, else 0

with the Bernoulli Kullback-Leibler divergence. The score is maximized
over alpha on a finite grid of observed range endpoints and over subsets
by coordinate ascent: for fixed attributes, sorting records by their
summed significance weights makes the optimal record set a prefix of
that order (the linear-time subset scanning property), and symmetrically
for attributes. Significance of the best subset is assessed by rescanning
replica test sets drawn from the training baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .baseline import EmpiricalBaseline, PRangeMatrix
from .binning import QuantileBinner
from .tables import ObservationTable

_TOL = 1e-12


@dataclass(frozen=True)
class Subset:
    """Record and attribute index sets of a scored subset."""

    records: np.ndarray
    attributes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "records", np.asarray(self.records, dtype=int))
        object.__setattr__(self, "attributes", np.asarray(self.attributes, dtype=int))

    def size(self) -> int:
        return self.records.size * self.attributes.size


@dataclass
class ScanResult:
    """Best subset found by a scan, with its score and maximizing level."""

    subset: Subset
    score: float
    alpha_star: float
    n_alpha: float
    n_total: int
    empirical_p: float | None = None


@dataclass(frozen=True)
class ScanConfig:
    """Knobs shared by scan, randomization test, and record flagging."""

    alpha_max: float = 0.5
    restarts: int = 50
    max_iterations: int = 100
    seed: int = 0
    peel_rounds: int = 10
    significance_level: float = 0.05
    null_replicas: int = 99
    weight_mode: str = "expectation"

    def __post_init__(self):
        if not 0 < self.alpha_max < 1:
            raise ValueError(f"alpha_max must lie in (0, 1), got {self.alpha_max}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def berk_jones(alpha: float, n_alpha: float, n: float) -> float:
    """Berk-Jones statistic: n * KL(r || alpha) above expectation, else 0.

    ``r = n_alpha / n`` is the observed significant fraction; the
    ``(1 - r)`` term is taken as 0 at r = 1. Raises ValueError outside
    the domain 0 < alpha < 1, 0 <= n_alpha <= n, n > 0.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if not 0 <= n_alpha <= n * (1 + 1e-12):
        raise ValueError(f"n_alpha must lie in [0, n], got {n_alpha} with n={n}")
    r = min(n_alpha / n, 1.0)
    if r <= alpha:
        return 0.0
    score = r * math.log(r / alpha)
    if r < 1.0:
        score += (1.0 - r) * math.log((1.0 - r) / (1.0 - alpha))
    return n * score


def _bj_array(alpha, n_alpha, n):
    # vectorized one-sided Berk-Jones; alpha may broadcast against arrays
    r = np.clip(np.asarray(n_alpha, dtype=float) / n, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = r * np.log(r / alpha)
        omr = 1.0 - r
        t2 = np.where(omr > 0.0, omr * np.log(np.maximum(omr, 1e-300) / (1.0 - alpha)), 0.0)
    return np.where(r > alpha, n * (np.nan_to_num(t1) + t2), 0.0)


def alpha_grid(matrix: PRangeMatrix, attrs=None, alpha_max: float = 0.5) -> np.ndarray:
    """Sorted candidate significance levels: distinct range endpoints of
    the selected attributes inside (0, alpha_max], plus alpha_max itself.
    """
    if attrs is None:
        attrs = np.arange(matrix.n_attributes)
    attrs = np.asarray(attrs, dtype=int)
    if attrs.size == 0:
        return np.array([alpha_max])
    vals = np.unique(np.concatenate([matrix.p_min[:, attrs].ravel(), matrix.p_max[:, attrs].ravel()]))
    vals = vals[(vals > 0.0) & (vals <= alpha_max)]
    return np.unique(np.append(vals, alpha_max))


def score_subset(matrix: PRangeMatrix, subset: Subset, alpha: float,
                 weight_mode: str = "expectation") -> tuple[float, float]:
    """Score one subset at one level; returns (score, n_alpha)."""
    if subset.records.size == 0 or subset.attributes.size == 0:
        raise ValueError("subset must have nonempty record and attribute sets")
    w = matrix.weights(alpha, weight_mode)
    n_alpha = float(w[np.ix_(subset.records, subset.attributes)].sum())
    return berk_jones(alpha, n_alpha, subset.size()), n_alpha


class _Workspace:
    """Weights precomputed per grid level: shape (n_levels, N, M)."""

    def __init__(self, matrix: PRangeMatrix, grid: np.ndarray, weight_mode: str):
        self.matrix = matrix
        self.grid = grid
        self.w = np.stack([matrix.weights(a, weight_mode) for a in grid])


def _best_prefix(w_sel: np.ndarray, grid: np.ndarray, unit: int):
    """LTSS step: for each level, sort items by priority and score every
    prefix; return the best (level index, prefix order, prefix length).

    ``w_sel`` has shape (n_levels, n_items); ``unit`` is the number of
    cells each item contributes. First maximum wins, which breaks prefix
    ties toward the smaller subset and level ties toward the smaller alpha.
    """
    order = np.argsort(-w_sel, axis=1, kind="stable")
    csum = np.cumsum(np.take_along_axis(w_sel, order, axis=1), axis=1)
    k = np.arange(1, w_sel.shape[1] + 1)
    scores = _bj_array(grid[:, None], csum, k[None, :] * unit)
    flat = int(np.argmax(scores))
    gi, ki = divmod(flat, w_sel.shape[1])
    return gi, order[gi, : ki + 1], float(scores[gi, ki]), float(csum[gi, ki])


def best_records_given(matrix: PRangeMatrix, attrs, alpha: float,
                       weight_mode: str = "expectation"):
    """Optimal record subset for fixed attributes and level.

    Records are ranked by their summed significance weights over the
    attributes (ties by ascending index); the LTSS property makes the
    best prefix of that ranking optimal over all record subsets.
    Returns (record indices ascending, score, n_alpha).
    """
    attrs = np.asarray(attrs, dtype=int)
    if attrs.size == 0:
        raise ValueError("attrs must be nonempty")
    w = matrix.weights(alpha, weight_mode)[:, attrs].sum(axis=1)
    _, prefix, score, n_alpha = _best_prefix(w[None, :], np.array([alpha]), attrs.size)
    return np.sort(prefix), score, n_alpha


def best_attributes_given(matrix: PRangeMatrix, records, alpha: float,
                          weight_mode: str = "expectation"):
    """Mirror of :func:`best_records_given` with roles exchanged."""
    records = np.asarray(records, dtype=int)
    if records.size == 0:
        raise ValueError("records must be nonempty")
    w = matrix.weights(alpha, weight_mode)[records, :].sum(axis=0)
    _, prefix, score, n_alpha = _best_prefix(w[None, :], np.array([alpha]), records.size)
    return np.sort(prefix), score, n_alpha


def _initial_attribute_subsets(m: int, config: ScanConfig):
    total = (1 << m) - 1 if m < 60 else None
    if total is not None and total <= config.restarts:
        # enumerating every nonempty subset dominates random restarts
        masks = np.arange(1, total + 1)
        subsets = [np.flatnonzero((mask >> np.arange(m)) & 1) for mask in masks]
        subsets.sort(key=lambda s: (s.size, tuple(s)))
        return subsets
    subsets = []
    for r in range(config.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 11, r]))
        if total is not None:
            mask = int(rng.integers(1, total + 1))
            subsets.append(np.flatnonzero((mask >> np.arange(m)) & 1))
        else:
            while True:
                pick = rng.random(m) < 0.5
                if pick.any():
                    subsets.append(np.flatnonzero(pick))
                    break
    return subsets


def scan(matrix: PRangeMatrix, config: ScanConfig = ScanConfig()) -> ScanResult:
    """Maximize the scan statistic by LTSS coordinate ascent with restarts.

    Each restart starts from an attribute subset and alternates exact
    record- and attribute-steps, re-optimizing alpha over the endpoint
    grid at every step, until the score stops improving. The best result
    across restarts is returned; its score re-evaluates exactly through
    :func:`score_subset`.
    """
    n, m = matrix.n_records, matrix.n_attributes
    if n == 0 or m == 0:
        raise ValueError("cannot scan an empty matrix")
    grid = alpha_grid(matrix, None, config.alpha_max)
    ws = _Workspace(matrix, grid, config.weight_mode)
    best = None
    for attrs0 in _initial_attribute_subsets(m, config):
        attrs = attrs0
        score = -np.inf
        records = np.array([0])
        gi = 0
        for _ in range(config.max_iterations):
            w_rec = ws.w[:, :, attrs].sum(axis=2)
            gi_r, rec_prefix, s_rec, _ = _best_prefix(w_rec, grid, attrs.size)
            records = np.sort(rec_prefix)
            w_att = ws.w[:, records, :].sum(axis=1)
            gi_a, att_prefix, s_att, _ = _best_prefix(w_att, grid, records.size)
            attrs = np.sort(att_prefix)
            gi = gi_a
            if s_att <= score + _TOL:
                score = max(score, s_att)
                break
            score = s_att
        if best is None or score > best[0] + _TOL:
            best = (score, records, attrs, grid[gi])
    score, records, attrs, alpha_star = best
    subset = Subset(records, attrs)
    exact_score, n_alpha = score_subset(matrix, subset, alpha_star, config.weight_mode)
    return ScanResult(subset, exact_score, float(alpha_star), n_alpha, subset.size())


def randomization_test(model: EmpiricalBaseline, test_size: int, observed_score: float,
                       config: ScanConfig = ScanConfig(), stream: int = 0) -> float:
    """Empirical p-value of an observed scan score.

    Scans ``config.null_replicas`` replica test sets of ``test_size``
    records drawn i.i.d. from the training empirical distribution with
    independent attributes; returns (1 + #{replica >= observed}) / (R+1).
    """
    exceed = 0
    for i in range(config.null_replicas):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 104729, stream, i]))
        null_matrix = model.sample_null(test_size, rng)
        if scan(null_matrix, config).score >= observed_score:
            exceed += 1
    return (1 + exceed) / (config.null_replicas + 1)


@dataclass
class FlagResult:
    """Per-record shift labels plus the scans that produced them."""

    shifted: np.ndarray
    scans: list[ScanResult] = field(default_factory=list)

    @property
    def shifted_fraction(self) -> float:
        return float(self.shifted.mean()) if self.shifted.size else 0.0

    def labels(self) -> list[str]:
        return ["shifted" if s else "not_shifted" for s in self.shifted]


def flag_shifted_records(model: EmpiricalBaseline, test: ObservationTable,
                         config: ScanConfig = ScanConfig()) -> FlagResult:
    """Iteratively peel significant anomalous subsets into record flags.

    Scans the test table against the baseline; while the randomization
    test is significant, marks the best subset's records shifted, removes
    them, and rescans the remainder, for at most ``config.peel_rounds``
    rounds (1 gives single-scan labelling). The final insignificant scan
    is kept in the result for reporting. Every record receives exactly
    one label.
    """
    if len(test) == 0:
        raise ValueError("test table must be nonempty")
    matrix = model.transform(test)
    shifted = np.zeros(matrix.n_records, dtype=bool)
    remaining = np.arange(matrix.n_records)
    scans: list[ScanResult] = []
    for round_idx in range(config.peel_rounds):
        if remaining.size == 0:
            break
        result = scan(matrix.take_records(remaining), config)
        result.empirical_p = randomization_test(model, remaining.size, result.score, config, stream=round_idx)
        # map subset record indices back into the original table
        result.subset = Subset(remaining[result.subset.records], result.subset.attributes)
        scans.append(result)
        if result.empirical_p > config.significance_level or result.score <= 0.0:
            break
        shifted[result.subset.records] = True
        keep = np.ones(remaining.size, dtype=bool)
        keep[np.searchsorted(remaining, result.subset.records)] = False
        remaining = remaining[keep]
    return FlagResult(shifted, scans)


class SubsetScanner(BaseEstimator):
    """Estimator facade: fit a baseline on training data, flag test records.

    The training table must already be categorical (see
    :class:`~shiftscan.binning.QuantileBinner`); ``predict`` returns one
    of ``"shifted"`` / ``"not_shifted"`` per test record and stores the
    underlying scans on ``scan_results_``.
    """

    def __init__(self, attributes=None, order: str = "rarity", alpha_max: float = 0.5,
                 restarts: int = 50, max_iterations: int = 100, peel_rounds: int = 10,
                 significance_level: float = 0.05, null_replicas: int = 99,
                 weight_mode: str = "expectation", seed: int = 0):
        self.attributes = attributes
        self.order = order
        self.alpha_max = alpha_max
        self.restarts = restarts
        self.max_iterations = max_iterations
        self.peel_rounds = peel_rounds
        self.significance_level = significance_level
        self.null_replicas = null_replicas
        self.weight_mode = weight_mode
        self.seed = seed

    def _config(self) -> ScanConfig:
        return ScanConfig(
            alpha_max=self.alpha_max, restarts=self.restarts,
            max_iterations=self.max_iterations, seed=self.seed,
            peel_rounds=self.peel_rounds, significance_level=self.significance_level,
            null_replicas=self.null_replicas, weight_mode=self.weight_mode,
        )

    def fit(self, table: ObservationTable, y=None):
        self.baseline_ = EmpiricalBaseline(attributes=self.attributes, order=self.order).fit(table)
        return self

    def predict(self, table: ObservationTable) -> np.ndarray:
        result = flag_shifted_records(self.baseline_, table, self._config())
        self.flag_result_ = result
        self.scan_results_ = result.scans
        return np.asarray(result.labels(), dtype=object)
