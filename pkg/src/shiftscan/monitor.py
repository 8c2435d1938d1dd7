"""Batch monitoring: windowed scanning with a detection state machine.

A stream of observations is cut into fixed-size windows, each scanned
against a frozen pre-shock baseline. Windows whose shifted-record
fraction breaches the threshold advance NORMAL -> SUSPECTED ->
CONFIRMED (after K consecutive breaches); from confirmation onward the
window rows accumulate as treatment data, retroactive to the start of
the breach run, and once enough have accumulated an honest causal
forest is trained (CONFIRMED -> CLASSIFYING) and labels every later
window's records as positive / negative / no shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .baseline import EmpiricalBaseline
from .binning import QuantileBinner
from .errors import ShiftScanError
from .forest import CausalForest, CateEstimate, assemble_treatment_data, classify_table
from .scanner import ScanConfig, flag_shifted_records
from .tables import ObservationTable, concat_tables


class Phase(str, Enum):
    NORMAL = "NORMAL"
    SUSPECTED = "SUSPECTED"
    CONFIRMED = "CONFIRMED"
    CLASSIFYING = "CLASSIFYING"


@dataclass(frozen=True)
class MonitorConfig:
    """Windowing, persistence, and hand-off settings."""

    window_size: int = 1000
    threshold: float = 0.2
    persistence: int = 3
    min_treatment_size: int = 500
    scan: ScanConfig = field(default_factory=ScanConfig)
    forest_params: dict = field(default_factory=dict)
    significance: float = 0.05
    n_bins: int = 4
    order: str = "rarity"
    seed: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class WindowReport:
    index: int
    size: int
    anomalous_fraction: float
    breach: bool
    phase: str
    short: bool = False
    label_fractions: dict | None = None


@dataclass
class MonitorState:
    """Mutable detection state folded over the window sequence."""

    phase: Phase = Phase.NORMAL
    consecutive_breaches: int = 0
    confirmed_at: int | None = None
    run_windows: list = field(default_factory=list)
    treatment_windows: list = field(default_factory=list)
    window_log: list = field(default_factory=list)
    forest: CausalForest | None = None
    encoder = None

    @property
    def treatment_count(self) -> int:
        return sum(len(w) for w in self.treatment_windows)


def process_window(state: MonitorState, window: ObservationTable,
                   baseline_model: EmpiricalBaseline, config: MonitorConfig,
                   raw_window: ObservationTable | None = None) -> WindowReport:
    """Scan one window, update the state machine, and log the outcome.

    The anomalous fraction is the share of window records flagged
    shifted against the frozen baseline. Breaches count consecutively;
    a non-breaching window resets the count unless already confirmed.
    Rows of the current breach run are buffered so that on confirmation
    the treatment pool starts at the run's first window. When the
    scanned table is a binned view, pass the original rows as
    ``raw_window``; the treatment pool stores those.
    """
    index = len(state.window_log)
    if raw_window is None:
        raw_window = window
    if len(window) == 0:
        report = WindowReport(index, 0, 0.0, False, state.phase.value, short=True)
        state.window_log.append(report)
        return report

    scan_config = replace(config.scan, seed=_window_seed(config.scan.seed, index))
    fraction = flag_shifted_records(baseline_model, window, scan_config).shifted_fraction
    breach = fraction > config.threshold

    if state.phase in (Phase.CONFIRMED, Phase.CLASSIFYING):
        state.treatment_windows.append(raw_window)
    elif breach:
        state.consecutive_breaches += 1
        state.run_windows.append(raw_window)
        if state.consecutive_breaches >= config.persistence:
            state.phase = Phase.CONFIRMED
            state.confirmed_at = index
            state.treatment_windows = list(state.run_windows)
            state.run_windows = []
        else:
            state.phase = Phase.SUSPECTED
    else:
        state.consecutive_breaches = 0
        state.run_windows = []
        state.phase = Phase.NORMAL

    report = WindowReport(index, len(window), fraction, breach, state.phase.value,
                          short=len(window) < config.window_size)
    state.window_log.append(report)
    return report


def maybe_train_forest(state: MonitorState, baseline_table: ObservationTable,
                       config: MonitorConfig) -> CausalForest | None:
    """Train the hand-off forest once enough treatment data accumulated.

    No-op unless the phase is CONFIRMED and the accumulated treatment
    rows reach ``min_treatment_size``; on success the state moves to
    CLASSIFYING. Fit errors propagate with the state unchanged.
    """
    if state.phase is not Phase.CONFIRMED or state.treatment_count < config.min_treatment_size:
        return None
    treatment = concat_tables(state.treatment_windows)
    data = assemble_treatment_data(baseline_table, treatment)
    forest = CausalForest(seed=config.seed, **config.forest_params)
    forest.fit(data.X, data.y, data.d)
    state.forest = forest
    state.encoder = data.encoder
    state.phase = Phase.CLASSIFYING
    return forest


@dataclass
class PipelineReport:
    windows: list
    confirmed_at: int | None
    classifying_from: int | None
    n_treatment_rows: int
    forest_trained: bool


def iter_windows(stream: ObservationTable, size: int):
    for start in range(0, len(stream), size):
        yield stream.select_rows(np.arange(start, min(start + size, len(stream))))


def run_pipeline(baseline: ObservationTable, stream: ObservationTable,
                 config: MonitorConfig = MonitorConfig()) -> tuple[MonitorState, PipelineReport]:
    """Fold the detection state machine over a record stream.

    Numeric features are quartile-binned on the baseline, the baseline
    model is frozen, and every window is scanned against it. After the
    forest hand-off, each subsequent window also receives per-record
    effect labels (raw features, not binned).
    """
    binner = QuantileBinner(n_bins=config.n_bins).fit(baseline)
    baseline_binned = binner.transform(baseline)
    model = EmpiricalBaseline(order=config.order).fit(baseline_binned)

    state = MonitorState()
    classifying_from = None
    for window in iter_windows(stream, config.window_size):
        report = process_window(state, binner.transform(window), model, config, raw_window=window)
        if state.phase is Phase.CONFIRMED:
            maybe_train_forest(state, baseline, config)
            if state.phase is Phase.CLASSIFYING:
                classifying_from = report.index + 1
        if state.phase is Phase.CLASSIFYING and state.forest is not None and classifying_from is not None \
                and report.index >= classifying_from:
            estimate = classify_table(state.forest, state.encoder, window, config.significance)
            report.label_fractions = estimate.fractions()
    return state, PipelineReport(
        windows=list(state.window_log),
        confirmed_at=state.confirmed_at,
        classifying_from=classifying_from,
        n_treatment_rows=state.treatment_count,
        forest_trained=state.forest is not None,
    )


def _window_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base & 0xFFFFFFFF, 20, index]).generate_state(1)[0])


def simulate_fraction_sequence(fractions, threshold: float, persistence: int):
    """Reference state trace for a known fraction sequence (test oracle).

    Returns the phase name per window under the breach / reset /
    confirmation rules, without any scanning.
    """
    phases = []
    run = 0
    confirmed = False
    for f in fractions:
        if confirmed:
            phases.append(Phase.CONFIRMED.value)
            continue
        if f > threshold:
            run += 1
            if run >= persistence:
                confirmed = True
                phases.append(Phase.CONFIRMED.value)
            else:
                phases.append(Phase.SUSPECTED.value)
        else:
            run = 0
            phases.append(Phase.NORMAL.value)
    return phases
