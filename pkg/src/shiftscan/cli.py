"""Command-line entry point: simulate / scan / cate / monitor / report.

Exit status is 0 on success, 1 on usage errors, and 2 on data or fit
errors. Diagnostics go to stderr; payloads go to --out or stdout. Every
payload echoes its full invocation (seed included), which is sufficient
to reproduce it byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys

from .baseline import EmpiricalBaseline
from .binning import QuantileBinner
from .errors import SchemaError, ShiftScanError
from .forest import CausalForest, assemble_treatment_data, classify_table
from .monitor import MonitorConfig, run_pipeline
from .report import dump_report, emit_histograms, histograms_to_csv_rows, make_report, validate_report
from .scanner import ScanConfig, flag_shifted_records
from .simulate import leak_split, load_scenario
from .tables import load_schema, load_table, save_table

UNCONFOUNDEDNESS_NOTE = (
    "Treatment assignment is assumed unconfounded given the covariates "
    "(pre/post shock design); no propensity modeling is applied."
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _resolve_seed(seed) -> int:
    # mandatory-for-reproducibility: drawn from entropy when omitted, and
    # always echoed so a rerun can pin it
    return int(seed) if seed is not None else secrets.randbits(32)


def build_parser() -> _Parser:
    parser = _Parser(prog="shiftscan", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[], help="generate a scenario's train/test tables")
    p.add_argument("--scenario", required=True, help="scenario JSON path or built-in name (scenario-paper, scenario-null)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.add_argument("--out-leaked", default=None, help="also write the leaked treatment-training rows")
    p.add_argument("--out", default=None, help="manifest JSON path (stdout if omitted)")

    p = sub.add_parser("scan", help="flag covariate-shifted records in a test table")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--alpha-max", type=float, default=0.5)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--peel-rounds", type=int, default=10)
    p.add_argument("--null-replicas", type=int, default=99)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=4, help="quantile bins for numeric features")
    p.add_argument("--order", choices=["rarity", "value"], default="rarity")
    p.add_argument("--weight-mode", choices=["expectation", "deterministic"], default="expectation")
    p.add_argument("--hist-bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("cate", help="estimate per-record treatment-effect shift labels")
    p.add_argument("--control", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--outcome", default=None)
    p.add_argument("--evaluate", default=None, help="table to classify (defaults to the treatment table)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--subsample", type=float, default=0.5)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--min-arm-leaf", type=int, default=5)
    p.add_argument("--hist-bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("monitor", help="run the windowed detection pipeline over a stream")
    p.add_argument("--baseline", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--persist", type=int, default=3)
    p.add_argument("--min-treatment", type=int, default=500)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--null-replicas", type=int, default=99)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--order", choices=["rarity", "value"], default="rarity")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="emit histogram summaries for labelled records")
    p.add_argument("--table", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--labels", required=True, help="JSON: {record_id: label} or a scan/cate report")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    return parser


def _emit(doc: dict, kind: str, out_path) -> None:
    validate_report(doc, kind)
    text = dump_report(doc, out_path)
    if out_path is None:
        sys.stdout.write(text)


def cmd_simulate(args) -> None:
    seed = _resolve_seed(args.seed)
    scenario = load_scenario(args.scenario)
    train, test = scenario.generate(seed)
    save_table(train, args.out_train)
    save_table(test, args.out_test)
    result = {
        "scenario": scenario.to_json(),
        "train_rows": len(train),
        "test_rows": len(test),
        "train_path": args.out_train,
        "test_path": args.out_test,
    }
    arguments = {
        "scenario": args.scenario, "seed": seed,
        "out-train": args.out_train, "out-test": args.out_test,
    }
    if args.out_leaked is not None:
        leak = leak_split(train, test, scenario.leak_fraction, seed=seed)
        leaked_rows = test.select_rows(leak.leaked_positions)
        save_table(leaked_rows, args.out_leaked)
        result["leak"] = {
            "fraction": scenario.leak_fraction,
            "n_leaked": len(leaked_rows),
            "leaked_path": args.out_leaked,
        }
        arguments["out-leaked"] = args.out_leaked
    _emit(make_report("simulate", arguments, result), "simulate", args.out)


def cmd_scan(args) -> None:
    seed = _resolve_seed(args.seed)
    schema = load_schema(args.schema)
    train = load_table(args.train, schema)
    test = load_table(args.test, schema)
    binner = QuantileBinner(n_bins=args.bins).fit(train)
    baseline = EmpiricalBaseline(order=args.order).fit(binner.transform(train))
    config = ScanConfig(
        alpha_max=args.alpha_max, restarts=args.restarts, seed=seed,
        peel_rounds=args.peel_rounds, significance_level=args.significance,
        null_replicas=args.null_replicas, weight_mode=args.weight_mode,
    )
    flags = flag_shifted_records(baseline, binner.transform(test), config)
    ids = test.record_ids
    attrs = baseline.attribute_names
    result = {
        "subsets": [
            {
                "records": [ids[i] for i in s.subset.records],
                "attributes": [attrs[j] for j in s.subset.attributes],
                "score": s.score,
                "alpha": s.alpha_star,
                "n_alpha": s.n_alpha,
                "n_total": s.n_total,
                "p_value": s.empirical_p,
            }
            for s in flags.scans
        ],
        "labels": dict(zip(ids, flags.labels())),
        "shifted_fraction": flags.shifted_fraction,
    }
    histograms = emit_histograms(test, flags.labels(), bins=args.hist_bins)
    arguments = {
        "train": args.train, "test": args.test, "schema": args.schema,
        "alpha-max": args.alpha_max, "restarts": args.restarts,
        "peel-rounds": args.peel_rounds, "null-replicas": args.null_replicas,
        "significance": args.significance, "bins": args.bins, "order": args.order,
        "weight-mode": args.weight_mode, "hist-bins": args.hist_bins, "seed": seed,
    }
    _emit(make_report("scan", arguments, result, histograms), "scan", args.out)


def cmd_cate(args) -> None:
    seed = _resolve_seed(args.seed)
    schema = load_schema(args.schema)
    control = load_table(args.control, schema)
    treatment = load_table(args.treatment, schema)
    evaluate = load_table(args.evaluate, schema) if args.evaluate else treatment
    data = assemble_treatment_data(control, treatment, outcome=args.outcome)
    forest = CausalForest(
        n_trees=args.trees, subsample_fraction=args.subsample,
        max_depth=args.max_depth, min_arm_leaf=args.min_arm_leaf, seed=seed,
    ).fit(data.X, data.y, data.d)
    estimate = classify_table(forest, data.encoder, evaluate, args.alpha)
    ids = evaluate.record_ids
    result = {
        "records": [
            {
                "id": ids[i],
                "tau_hat": float(estimate.tau_hat[i]),
                "variance": float(estimate.variance[i]),
                "ci_low": float(estimate.ci_low[i]),
                "ci_high": float(estimate.ci_high[i]),
                "label": str(estimate.label[i]),
            }
            for i in range(len(ids))
        ],
        "summary": {
            "positive_frac": estimate.fractions()["positive"],
            "negative_frac": estimate.fractions()["negative"],
            "none_frac": estimate.fractions()["none"],
        },
        "assumptions": [UNCONFOUNDEDNESS_NOTE],
    }
    histograms = emit_histograms(evaluate, list(estimate.label), bins=args.hist_bins)
    arguments = {
        "control": args.control, "treatment": args.treatment, "schema": args.schema,
        "outcome": args.outcome or "", "evaluate": args.evaluate or "",
        "alpha": args.alpha, "trees": args.trees, "subsample": args.subsample,
        "max-depth": args.max_depth, "min-arm-leaf": args.min_arm_leaf,
        "hist-bins": args.hist_bins, "seed": seed,
    }
    _emit(make_report("cate", arguments, result, histograms), "cate", args.out)


def cmd_monitor(args) -> None:
    seed = _resolve_seed(args.seed)
    schema = load_schema(args.schema)
    baseline = load_table(args.baseline, schema)
    stream = load_table(args.stream, schema)
    config = MonitorConfig(
        window_size=args.window, threshold=args.threshold, persistence=args.persist,
        min_treatment_size=args.min_treatment,
        scan=ScanConfig(restarts=args.restarts, null_replicas=args.null_replicas,
                        significance_level=args.significance, seed=seed),
        forest_params={"n_trees": args.trees},
        significance=args.significance, order=args.order, seed=seed,
    )
    _, pipeline = run_pipeline(baseline, stream, config)
    result = {
        "windows": [
            {
                "index": w.index, "size": w.size,
                "anomalous_fraction": w.anomalous_fraction,
                "breach": w.breach, "phase": w.phase, "short": w.short,
                "label_fractions": w.label_fractions,
            }
            for w in pipeline.windows
        ],
        "confirmed_at": pipeline.confirmed_at,
        "classifying_from": pipeline.classifying_from,
        "n_treatment_rows": pipeline.n_treatment_rows,
        "forest_trained": pipeline.forest_trained,
        "phase_timeline": [w.phase for w in pipeline.windows],
    }
    arguments = {
        "baseline": args.baseline, "stream": args.stream, "schema": args.schema,
        "window": args.window, "threshold": args.threshold, "persist": args.persist,
        "min-treatment": args.min_treatment, "restarts": args.restarts,
        "null-replicas": args.null_replicas, "significance": args.significance,
        "trees": args.trees, "order": args.order, "seed": seed,
    }
    _emit(make_report("monitor", arguments, result), "monitor", args.out)


def cmd_report(args) -> None:
    seed = _resolve_seed(args.seed)
    schema = load_schema(args.schema)
    table = load_table(args.table, schema)
    with open(args.labels, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    label_map = doc.get("result", {}).get("labels", doc.get("labels", doc))
    if not isinstance(label_map, dict):
        raise SchemaError("labels file must map record ids to group labels")
    try:
        labels = [str(label_map[rid]) for rid in table.record_ids]
    except KeyError as exc:
        raise SchemaError(f"labels file lacks record id {exc.args[0]!r}") from None
    histograms = emit_histograms(table, labels, bins=args.bins)
    arguments = {
        "table": args.table, "schema": args.schema, "labels": args.labels,
        "bins": args.bins, "format": args.format, "seed": seed,
    }
    if args.format == "csv":
        lines = ["feature,group,bin,frequency"]
        lines += [f"{f},{g},\"{b}\",{freq!r}" for f, g, b, freq in histograms_to_csv_rows(histograms)]
        text = "\n".join(lines) + "\n"
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        return
    counts = {g: labels.count(g) for g in sorted(set(labels))}
    result = {"n_records": len(table), "group_counts": counts}
    _emit(make_report("report", arguments, result, histograms), "report", args.out)


_HANDLERS = {
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "cate": cmd_cate,
    "monitor": cmd_monitor,
    "report": cmd_report,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        _HANDLERS[args.command](args)
    except ShiftScanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
