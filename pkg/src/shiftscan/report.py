"""Machine-readable report bundles with plot-ready histogram summaries.

Every CLI subcommand emits a JSON document of the form
{tool, invocation, result[, histograms]} that validates against a schema
shipped with the package. The invocation echo (full flag set including
the seed) is sufficient to reproduce the payload byte-for-byte; no
timestamps enter the payload body.
"""

from __future__ import annotations

import json
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .tables import ObservationTable


def emit_histograms(table: ObservationTable, labels, bins: int = 20) -> dict:
    """Per-feature, per-group normalized frequencies with shared bins.

    Numeric features get equal-width bins over the observed range across
    all groups (missing values excluded); categorical features use their
    observed categories. Each nonempty group's frequencies sum to 1.
    """
    labels = np.asarray(labels, dtype=object)
    if labels.size != len(table):
        raise ValueError(f"need one label per record: {labels.size} labels, {len(table)} rows")
    groups = sorted(set(labels))
    out = {}
    for name in table.schema.feature_names():
        attr = table.schema[name]
        entry: dict = {"kind": attr.kind}
        if attr.kind == "numeric":
            values = table.column(name).astype(float)
            finite = values[~np.isnan(values)]
            if finite.size == 0:
                entry["bin_edges"] = []
                entry["groups"] = {g: [] for g in groups}
                out[name] = entry
                continue
            lo, hi = float(finite.min()), float(finite.max())
            if lo == hi:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, bins + 1)
            entry["bin_edges"] = [float(e) for e in edges]
            entry["groups"] = {}
            for g in groups:
                sel = values[(labels == g) & ~np.isnan(values)]
                counts, _ = np.histogram(sel, bins=edges)
                entry["groups"][g] = _normalize(counts)
        else:
            tokens = table.column(name)
            cats = sorted({str(v) for v in tokens})
            entry["categories"] = cats
            entry["groups"] = {}
            for g in groups:
                sel = tokens[labels == g]
                counts = np.array([(sel == c).sum() for c in cats])
                entry["groups"][g] = _normalize(counts)
        out[name] = entry
    return out


def _normalize(counts: np.ndarray) -> list:
    total = counts.sum()
    if total == 0:
        return []
    return [float(c) / float(total) for c in counts]


def make_report(command: str, arguments: dict, result: dict, histograms: dict | None = None) -> dict:
    doc = {
        "tool": {"name": "shiftscan", "version": __version__},
        "invocation": {"command": command, "arguments": arguments},
        "result": result,
    }
    if histograms is not None:
        doc["histograms"] = histograms
    return doc


def _load_schema(kind: str) -> dict:
    ref = resources.files("shiftscan.schemas").joinpath(f"{kind}.schema.json")
    return json.loads(ref.read_text())


def validate_report(doc: dict, kind: str) -> None:
    """Raise jsonschema.ValidationError unless doc matches the shipped schema."""
    jsonschema.validate(doc, _load_schema(kind))


def dump_report(doc: dict, path=None) -> str:
    """Serialize deterministically (sorted keys) and optionally write."""
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def histograms_to_csv_rows(histograms: dict):
    """Flatten histogram summaries to (feature, group, bin, frequency) rows."""
    rows = []
    for feature in sorted(histograms):
        entry = histograms[feature]
        names = entry.get("categories")
        if names is None:
            edges = entry.get("bin_edges", [])
            names = [f"({edges[i]!r}, {edges[i + 1]!r}]" for i in range(len(edges) - 1)]
        for group in sorted(entry["groups"]):
            for bin_name, freq in zip(names, entry["groups"][group]):
                rows.append((feature, group, bin_name, freq))
    return rows
