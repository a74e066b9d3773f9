"""Render benchmark CSV artifacts as figures.

Four figure kinds, each a pure consumer of one CSV schema produced by the
solver toolkit (no numerical logic is duplicated here):

* ``barrier``       barrier.csv       (z, delta, value)
* ``convergence``   ensemble.csv      (k, mean_err, std_err, mean_violation, runs)
* ``trajectory2d``  trajectory2d.csv  (run_id, k, x1, x2, label)
* ``timing``        timing.csv        (algorithm, m, seed, k_tau, wall_seconds, converged)

Rendering is deterministic: identical inputs produce identical image bytes
(embedded timestamps are disabled).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "rbsgd-plots"  # uuid4 ids otherwise

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "load_spec", "render"]

KINDS = ("barrier", "convergence", "trajectory2d", "timing")

SCHEMAS = {
    "barrier": ["z", "delta", "value"],
    "convergence": ["k", "mean_err", "std_err", "mean_violation", "runs"],
    "trajectory2d": ["run_id", "k", "x1", "x2", "label"],
    "timing": ["algorithm", "m", "seed", "k_tau", "wall_seconds", "converged"],
}


class SchemaError(ValueError):
    """Input CSV does not conform to the expected schema."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    input_csv: str
    output: str
    x_log: bool = False
    y_log: bool = False
    title: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")


def load_spec(path) -> FigureSpec:
    """Read a figure spec from a small JSON file."""
    with open(path) as f:
        data = json.load(f)
    allowed = {"kind", "input_csv", "output", "x_log", "y_log", "title"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown spec key(s): {', '.join(sorted(unknown))}")
    for key in ("kind", "input_csv", "output"):
        if key not in data:
            raise ValueError(f"spec key {key!r} is required")
    return FigureSpec(**data)


def _read_rows(path, kind: str) -> dict[str, list[str]]:
    expected = SCHEMAS[kind]
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected columns {expected}")
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing column(s) {missing}")
            if extra:
                parts.append(f"unexpected column(s) {extra}")
            raise SchemaError(f"{path}: {'; '.join(parts)}")
        index = [header.index(c) for c in expected]
        columns: dict[str, list[str]] = {c: [] for c in expected}
        for row in reader:
            for c, i in zip(expected, index):
                columns[c].append(row[i])
    return columns


def _floats(column: list[str]) -> np.ndarray:
    return np.array([float(v) for v in column])


def _plot_barrier(ax, columns) -> None:
    z = _floats(columns["z"])
    delta = _floats(columns["delta"])
    value = _floats(columns["value"])
    # Larger relaxation first so the steepest (smallest delta) curve is
    # drawn last and sits on top, as in the barrier-shape figure.
    for d in sorted(set(delta), reverse=True):
        mask = delta == d
        order = np.argsort(z[mask])
        ax.plot(z[mask][order], value[mask][order], label=f"delta={d:g}")
    ax.axvline(0.0, color="0.8", linewidth=0.8, zorder=0)
    ax.set_xlabel("constraint value z")
    ax.set_ylabel("barrier value")
    ax.legend()


def _plot_convergence(ax, columns) -> None:
    k = _floats(columns["k"])
    mean = _floats(columns["mean_err"])
    std = _floats(columns["std_err"])
    order = np.argsort(k)
    k, mean, std = k[order], mean[order], std[order]
    positive = k > 0  # log axes cannot show the k=0 record
    k, mean, std = k[positive], mean[positive], std[positive]
    ax.fill_between(k, mean - std, mean + std, alpha=0.3, label="±1 std")
    ax.plot(k, mean, label="mean error")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("distance to limit point")
    ax.legend()


def _plot_trajectory2d(ax, columns) -> None:
    run_id = _floats(columns["run_id"]).astype(int)
    k = _floats(columns["k"])
    x1 = _floats(columns["x1"])
    x2 = _floats(columns["x2"])
    labels = columns["label"]
    families = sorted(set(labels))
    styles = ["-", "--", ":", "-."]
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for fam_idx, family in enumerate(families):
        mask = np.array([lab == family for lab in labels])
        for i, run in enumerate(sorted(set(run_id[mask]))):
            sel = mask & (run_id == run)
            order = np.argsort(k[sel])
            ax.plot(
                x1[sel][order],
                x2[sel][order],
                linestyle=styles[fam_idx % len(styles)],
                color=colors[fam_idx % len(colors)],
                label=family if i == 0 else None,
            )
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend()


def _plot_timing(ax, columns) -> None:
    algorithms = columns["algorithm"]
    m = _floats(columns["m"])
    wall = _floats(columns["wall_seconds"])
    for algorithm in sorted(set(algorithms)):
        mask = np.array([a == algorithm for a in algorithms])
        ms = np.array(sorted(set(m[mask])))
        means = np.array([wall[mask & (m == mi)].mean() for mi in ms])
        ax.plot(ms, means, marker="o", label=algorithm)
    ax.set_xlabel("number of constraints m")
    ax.set_ylabel("wall seconds to tolerance")
    ax.legend()


_PLOTTERS = {
    "barrier": _plot_barrier,
    "convergence": _plot_convergence,
    "trajectory2d": _plot_trajectory2d,
    "timing": _plot_timing,
}

# Log axes unless the spec says otherwise.
_DEFAULT_LOG = {
    "convergence": (True, True),
    "timing": (True, True),
    "barrier": (False, False),
    "trajectory2d": (False, False),
}


def render(spec: FigureSpec):
    """Render one figure; returns the matplotlib figure after writing it."""
    columns = _read_rows(spec.input_csv, spec.kind)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    _PLOTTERS[spec.kind](ax, columns)
    x_log, y_log = _DEFAULT_LOG[spec.kind]
    if spec.x_log or x_log:
        ax.set_xscale("log")
    if spec.y_log or y_log:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    # SVG output embeds a creation date unless suppressed; PNG does not.
    metadata = {"Date": None} if out.suffix == ".svg" else None
    fig.savefig(out, metadata=metadata)
    return fig
