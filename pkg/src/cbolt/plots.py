"""Figure rendering for experiment outputs.

Every plot reads the same delimited files the CLI writes, so figures can be
regenerated from artifacts alone.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import engine

_DPI = 130


def plot_best_feasible(curves: dict[str, list[float | None]], path: str,
                       title: str) -> None:
    """Step plot of running best feasible objective per iteration."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, curve in curves.items():
        xs = [t for t, v in enumerate(curve) if v is not None]
        ys = [v for v in curve if v is not None]
        if xs:
            ax.step(xs, ys, where="post", marker=".", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("best feasible objective")
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_trace_csv(trace_path: str, png_path: str, title: str) -> None:
    curve = engine.best_feasible_curve(engine.read_trace_csv(trace_path))
    plot_best_feasible({"best feasible": curve}, png_path, title)


def plot_diagnostic_csv(csv_path: str, png_path: str) -> None:
    """Grouped bars of decode percentages across the diagnostic groups."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    groups = [r["group"] for r in rows]
    series = ["pct_valid", "pct_methane", "pct_druglike"]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    width = 0.8 / len(series)
    for j, name in enumerate(series):
        xs = [i + (j - 1) * width for i in range(len(groups))]
        ax.bar(xs, [float(r[name]) for r in rows], width=width,
               label=name.replace("pct_", "% "))
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups, rotation=20)
    ax.set_ylabel("percent of decode attempts")
    ax.set_title("decoder health by latent group")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=_DPI)
    plt.close(fig)


def plot_lint_counts(n_valid: int, n_invalid: int, png_path: str) -> None:
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.bar(["valid", "invalid"], [n_valid, n_invalid],
           color=["tab:green", "tab:red"])
    ax.set_ylabel("strings")
    ax.set_title("validity lint")
    fig.tight_layout()
    fig.savefig(png_path, dpi=_DPI)
    plt.close(fig)
