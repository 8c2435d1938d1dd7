"""Covariate-shift and concept-drift detection for tabular data.

Detectors: a nonparametric subset scanner that finds anomalous record x
attribute patterns against a training baseline, and an honest causal
forest that labels per-record effect shifts with confidence intervals.
A demand-shock simulator generates ground-truth-shifted datasets, and a
batch monitoring pipeline chains the two detectors behind a breach-
persistence state machine. The ``shiftscan`` CLI exposes simulate /
scan / cate / monitor / report subcommands.
"""

__version__ = "0.1.0"

from .baseline import EmpiricalBaseline, PRange, PRangeMatrix, significance_weight
from .binning import QuantileBinner
from .errors import EmptyTableError, FitError, ParseError, SchemaError, ShiftScanError
from .forest import (
    CateEstimate,
    CausalForest,
    FeatureEncoder,
    TreatmentData,
    assemble_treatment_data,
    classify_table,
)
from .monitor import MonitorConfig, MonitorState, Phase, process_window, run_pipeline
from .scanner import (
    FlagResult,
    ScanConfig,
    ScanResult,
    Subset,
    SubsetScanner,
    alpha_grid,
    berk_jones,
    best_attributes_given,
    best_records_given,
    flag_shifted_records,
    randomization_test,
    scan,
    score_subset,
)
from .simulate import (
    ChoiceParams,
    FlightConfig,
    IntensityFunction,
    Scenario,
    generate_dataset,
    leak_split,
    load_scenario,
    sample_price,
    simulate_arrivals,
    simulate_choice,
)
from .tables import (
    Attribute,
    ObservationTable,
    TableSchema,
    concat_tables,
    load_schema,
    load_table,
    save_schema,
    save_table,
    split_by_timestamp,
)

__all__ = [
    "Attribute",
    "CateEstimate",
    "CausalForest",
    "ChoiceParams",
    "EmpiricalBaseline",
    "EmptyTableError",
    "FeatureEncoder",
    "FitError",
    "FlagResult",
    "FlightConfig",
    "IntensityFunction",
    "MonitorConfig",
    "MonitorState",
    "ObservationTable",
    "PRange",
    "PRangeMatrix",
    "ParseError",
    "Phase",
    "QuantileBinner",
    "ScanConfig",
    "ScanResult",
    "Scenario",
    "SchemaError",
    "ShiftScanError",
    "Subset",
    "SubsetScanner",
    "TableSchema",
    "TreatmentData",
    "alpha_grid",
    "assemble_treatment_data",
    "berk_jones",
    "best_attributes_given",
    "best_records_given",
    "classify_table",
    "concat_tables",
    "flag_shifted_records",
    "generate_dataset",
    "leak_split",
    "load_scenario",
    "load_schema",
    "load_table",
    "process_window",
    "randomization_test",
    "run_pipeline",
    "sample_price",
    "save_schema",
    "save_table",
    "scan",
    "score_subset",
    "significance_weight",
    "simulate_arrivals",
    "simulate_choice",
    "split_by_timestamp",
]
