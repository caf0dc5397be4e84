"""Readers for the versioned campaign artifact formats.

This package renders artifacts only; it never recomputes rates or
deviations, and it does not depend on the engine that produced them.
"""

import json

import numpy as np

SUMMARY_VERSION = 1
BENCH_VERSION = 1


class SchemaError(ValueError):
    pass


def load_summary(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot read summary: {exc}") from exc
    if doc.get("kind") != "campaign-summary" or doc.get("v") != SUMMARY_VERSION:
        raise SchemaError(
            f"{path}: unsupported summary schema "
            f"(expected kind=campaign-summary v{SUMMARY_VERSION}, "
            f"got kind={doc.get('kind')!r} v={doc.get('v')!r})"
        )
    return doc


def load_bench(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot read bench table: {exc}") from exc
    if doc.get("kind") != "overhead-bench" or doc.get("v") != BENCH_VERSION:
        raise SchemaError(
            f"{path}: unsupported bench schema "
            f"(expected kind=overhead-bench v{BENCH_VERSION})"
        )
    return doc


def load_deviations(path) -> np.ndarray:
    """Deviation matrix CSV (row = run, column = slot) -> flat value array."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("run,slot_0"):
            raise SchemaError(
                f"{path}: unsupported deviation matrix header "
                "(expected 'run,slot_0,...')"
            )
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        return np.empty((0, 0))
    return np.array(rows)
