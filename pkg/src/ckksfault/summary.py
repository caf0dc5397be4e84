"""Campaign record/summary schemas and aggregation.

Artifacts (all schema-versioned, stable field names):

* records: one JSON object per line with site, classification,
  max_deviation, duration_ns, seed plus run/cell metadata and guard events;
* summary: a single JSON document of per-(workload, preset, protection)
  cells with counts, rates, deviation extrema and log10-bucket histograms;
* deviation matrix: CSV, one row per run, one column per slot.

Aggregation is exact over the record stream, and `aggregate` rebuilds the
summary byte-for-byte from the written artifacts.
"""

import json
from collections import Counter

import numpy as np

from .errors import ConfigurationError

RECORD_VERSION = 1
SUMMARY_VERSION = 1

CLASSIFICATIONS = ("masked", "sdc", "detected")


def outcome_record(run_index, workload_id, preset_name, protection, outcome,
                   epsilon, master_seed, emit_timing=False) -> dict:
    """Serialize one run outcome. Timing fields are zeroed unless emit_timing
    so that identical campaigns produce byte-identical record files."""
    return {
        "v": RECORD_VERSION,
        "run": run_index,
        "workload": workload_id,
        "preset": preset_name,
        "protection": str(protection),
        "master_seed": master_seed,
        "epsilon": float(epsilon),
        "seed": outcome.seed,
        "site": outcome.site.to_dict() if outcome.site is not None else None,
        "classification": outcome.classification,
        "max_deviation": float(outcome.max_deviation),
        "slots_over_eps": int(outcome.slots_over_eps),
        "duration_ns": int(outcome.duration_ns) if emit_timing else 0,
        "guard_events": [
            {"stage": e.stage, "kind": e.kind, "detail": e.detail,
             "action": e.action}
            for e in outcome.guard_events
        ],
    }


def record_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def parse_records(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(
                    f"{path}:{lineno}: bad record: {exc}"
                ) from exc
            if rec.get("v") != RECORD_VERSION:
                raise ConfigurationError(
                    f"{path}:{lineno}: unsupported record version {rec.get('v')!r}"
                )
            records.append(rec)
    return records


class DeviationWriter:
    """Streams the per-slot deviation matrix (row = run, column = slot)."""

    def __init__(self, path, n_slots):
        self.path = path
        self._fh = open(path, "w")
        self._fh.write("run," + ",".join(f"slot_{i}" for i in range(n_slots)) + "\n")

    def write_row(self, run_index, deviations):
        self._fh.write(str(run_index) + ","
                       + ",".join(repr(float(v)) for v in deviations) + "\n")

    def close(self):
        self._fh.close()


def read_deviation_rows(path):
    """Yields (run_index, np.ndarray) rows from a deviation CSV."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("run,"):
            raise ConfigurationError(f"{path}: not a deviation matrix CSV")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                yield int(parts[0]), np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from exc


class CellAggregator:
    """Exact streaming statistics for one (workload, preset, protection)."""

    def __init__(self, workload, preset, protection):
        self.workload = workload
        self.preset = preset
        self.protection = protection
        self.runs = 0
        self.counts = Counter()
        self.max_deviation = 0.0
        self.wallclock_ns = 0
        self.epsilon = None
        self.master_seed = None
        self.guard_event_count = 0
        self._min_positive = None
        self._hist = Counter()
        self._have_slots = False

    def add_record(self, rec):
        self.runs += 1
        self.counts[rec["classification"]] += 1
        self.max_deviation = max(self.max_deviation, rec["max_deviation"])
        self.wallclock_ns += rec["duration_ns"]
        self.guard_event_count += len(rec["guard_events"])
        self.epsilon = rec["epsilon"] if "epsilon" in rec else self.epsilon
        self.master_seed = rec.get("master_seed", self.master_seed)

    def add_slots(self, deviations):
        self._have_slots = True
        positive = deviations[deviations > 0]
        zeros = int(len(deviations) - len(positive))
        if zeros:
            self._hist["zero"] += zeros
        if len(positive):
            lows = np.floor(np.log10(positive)).astype(np.int64)
            for bucket, count in zip(*np.unique(lows, return_counts=True)):
                self._hist[str(int(bucket))] += int(count)
            m = float(positive.min())
            if self._min_positive is None or m < self._min_positive:
                self._min_positive = m

    def cell(self) -> dict:
        rates = {
            c: (self.counts[c] / self.runs if self.runs else 0.0)
            for c in CLASSIFICATIONS
        }
        return {
            "workload": self.workload,
            "preset": self.preset,
            "protection": self.protection,
            "master_seed": self.master_seed,
            "runs": self.runs,
            "epsilon": self.epsilon,
            "counts": {c: self.counts[c] for c in CLASSIFICATIONS},
            "rates": rates,
            "max_deviation": self.max_deviation,
            "min_positive_deviation": self._min_positive,
            "deviation_histogram": dict(sorted(self._hist.items()))
            if self._have_slots else None,
            "guard_events": self.guard_event_count,
            "wallclock_ns": self.wallclock_ns,
        }


def aggregate(records, deviations_by_run=None) -> dict:
    """Summary document from a record stream, grouped into cells.

    deviations_by_run: optional {run_index: slot deviation vector}; slot-level
    extrema and histograms are only filled when it is supplied.
    """
    if not records:
        raise ConfigurationError("cannot aggregate an empty record stream")
    cells = {}
    for rec in records:
        key = (rec["workload"], rec["preset"], rec["protection"])
        agg = cells.get(key)
        if agg is None:
            agg = cells[key] = CellAggregator(*key)
        agg.add_record(rec)
        if deviations_by_run is not None and rec["run"] in deviations_by_run:
            agg.add_slots(deviations_by_run[rec["run"]])
    return {
        "v": SUMMARY_VERSION,
        "kind": "campaign-summary",
        "cells": [cells[k].cell() for k in sorted(cells)],
    }


def summary_text(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def write_summary(path, summary: dict):
    with open(path, "w") as fh:
        fh.write(summary_text(summary))


def load_summary(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read summary {path}: {exc}") from exc
    if doc.get("v") != SUMMARY_VERSION or doc.get("kind") != "campaign-summary":
        raise ConfigurationError(f"{path}: unsupported summary document")
    return doc
