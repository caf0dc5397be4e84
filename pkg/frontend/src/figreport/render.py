"""Deterministic figure rendering for the three paper-style figure kinds."""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .inputs import SchemaError, load_bench, load_deviations, load_summary

JITTER_SEED = 20260809
MAX_POINTS_PER_PANEL = 20000

FIGURE_KINDS = ("deviation-strips", "sdc-bars", "overhead-bars")

plt.rcParams["svg.hashsalt"] = "figreport"


@dataclass
class FigureSpec:
    kind: str
    inputs: list                  # (label, path) pairs
    out: str
    panel_per_input: bool = True  # deviation strips: one panel per input
    title: str = None
    options: dict = field(default_factory=dict)


def _save(fig, out):
    fig.savefig(out, metadata={"Date": None} if out.endswith(".svg") else None)
    plt.close(fig)


def _no_data_figure(out, message="no data"):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.text(0.5, 0.5, message, ha="center", va="center", fontsize=14)
    ax.set_axis_off()
    _save(fig, out)


def render(spec: FigureSpec) -> dict:
    """Render one figure file; returns panel metadata for verification.

    Pure function of (input files, spec): jitter and subsampling are seeded.
    """
    if spec.kind == "deviation-strips":
        return _render_deviation_strips(spec)
    if spec.kind == "sdc-bars":
        return _render_sdc_bars(spec)
    if spec.kind == "overhead-bars":
        return _render_overhead_bars(spec)
    raise SchemaError(f"unknown figure kind {spec.kind!r}; "
                      f"available: {', '.join(FIGURE_KINDS)}")


def _render_deviation_strips(spec) -> dict:
    rng = np.random.default_rng(JITTER_SEED)
    strips = []
    for label, path in spec.inputs:
        values = load_deviations(path).ravel()
        positive = values[values > 0]
        strips.append((label, positive, len(values)))
    if not strips or all(len(vals) == 0 for _, vals, _ in strips):
        _no_data_figure(spec.out)
        return {"path": spec.out, "panels": [], "no_data": True}

    meta = []
    if spec.panel_per_input:
        fig, axes = plt.subplots(
            1, len(strips), figsize=(2.2 * len(strips) + 1, 3.4), sharey=False)
        if len(strips) == 1:
            axes = [axes]
        for ax, (label, vals, total) in zip(axes, strips):
            meta.append(_draw_strip(ax, [(label, vals)], rng))
            ax.set_title(label, fontsize=9)
        axes[0].set_ylabel("slot deviation")
    else:
        fig, ax = plt.subplots(figsize=(1.2 * len(strips) + 1.5, 3.4))
        meta.append(_draw_strip(ax, [(l, v) for l, v, _ in strips], rng))
        ax.set_ylabel("slot deviation")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    _save(fig, spec.out)
    return {"path": spec.out, "panels": meta, "no_data": False}


def _draw_strip(ax, labelled_values, rng) -> dict:
    xticks = []
    panel = {"strips": [], "ymax": 0.0, "points": 0}
    for x, (label, vals) in enumerate(labelled_values):
        if len(vals) > MAX_POINTS_PER_PANEL:
            idx = rng.choice(len(vals), MAX_POINTS_PER_PANEL, replace=False)
            shown = vals[idx]
        else:
            shown = vals
        jitter = rng.uniform(-0.28, 0.28, len(shown))
        ax.scatter(np.full(len(shown), x) + jitter, shown, s=2, alpha=0.35,
                   linewidths=0, rasterized=True)
        if len(vals):
            ymax = float(vals.max())
            ax.plot([x - 0.35, x + 0.35], [ymax, ymax], lw=1.0)
            panel["ymax"] = max(panel["ymax"], ymax)
        xticks.append(label)
        panel["points"] += int(len(shown))
        panel["strips"].append({"label": label, "points": int(len(shown))})
    ax.set_yscale("log")
    ax.set_xticks(range(len(xticks)))
    ax.set_xticklabels(xticks, rotation=30, ha="right", fontsize=8)
    ax.grid(True, axis="y", alpha=0.25)
    return panel


def _render_sdc_bars(spec) -> dict:
    cells = []
    for _, path in spec.inputs:
        cells.extend(load_summary(path)["cells"])
    if not cells:
        _no_data_figure(spec.out)
        return {"path": spec.out, "bars": [], "no_data": True}
    workloads = sorted({c["workload"] for c in cells})
    protections = sorted({c["protection"] for c in cells})
    width = 0.8 / len(protections)
    fig, ax = plt.subplots(figsize=(1.4 * len(workloads) + 2, 3.2))
    bars = []
    for pi, prot in enumerate(protections):
        xs, ys = [], []
        for wi, wl in enumerate(workloads):
            match = [c for c in cells
                     if c["workload"] == wl and c["protection"] == prot]
            if not match:
                continue
            rate = match[0]["rates"]["sdc"]
            xs.append(wi + (pi - (len(protections) - 1) / 2) * width)
            ys.append(rate * 100)
            bars.append({"workload": wl, "protection": prot, "sdc_pct": rate * 100})
        ax.bar(xs, ys, width=width * 0.9, label=prot)
    ax.set_xticks(range(len(workloads)))
    ax.set_xticklabels(workloads)
    ax.set_ylabel("SDC rate (%)")
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.25)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    _save(fig, spec.out)
    return {"path": spec.out, "bars": bars, "no_data": False}


def _render_overhead_bars(spec) -> dict:
    tables = [(label, load_bench(path)) for label, path in spec.inputs]
    if not tables:
        _no_data_figure(spec.out)
        return {"path": spec.out, "bars": [], "no_data": True}
    modes = []
    for _, t in tables:
        for m in t["modes"]:
            if m not in modes:
                modes.append(m)
    width = 0.8 / len(modes)
    fig, ax = plt.subplots(figsize=(1.5 * len(tables) + 2, 3.2))
    bars = []
    for mi, mode in enumerate(modes):
        xs, ys = [], []
        for ti, (label, t) in enumerate(tables):
            row = t["modes"].get(mode)
            if row is None or "normalized" not in row:
                continue
            xs.append(ti + (mi - (len(modes) - 1) / 2) * width)
            ys.append(row["normalized"])
            bars.append({"input": label, "mode": mode,
                         "normalized": row["normalized"]})
        ax.bar(xs, ys, width=width * 0.9, label=mode)
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xticks(range(len(tables)))
    ax.set_xticklabels([label for label, _ in tables])
    ax.set_ylabel("runtime (normalized to unprotected)")
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.25)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    _save(fig, spec.out)
    return {"path": spec.out, "bars": bars, "no_data": False}
