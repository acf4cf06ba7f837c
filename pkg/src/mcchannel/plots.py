"""Figure rendering for the report pipeline.

Every report CSV gets a PNG rendered next to it.  The Agg backend is
forced so runs are headless-safe, and PNG output carries no timestamps,
keeping reruns byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_curve",
    "plot_fit",
    "plot_table2",
    "plot_table4",
    "plot_fig4",
    "plot_rates",
]

_DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_curve(times, values, path, label="simulation"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, values, lw=1.2, label=label)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("cumulative absorbed fraction")
    ax.legend()
    _save(fig, path)


def plot_fit(times, target, model, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, target, lw=1.0, label="target")
    ax.plot(times, model, "--", lw=1.2, label="fitted model")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("cumulative absorbed fraction")
    ax.legend()
    _save(fig, path)


def plot_table2(rows, path):
    """rows: dicts with d, R, rmse, rmse_uncorrected."""
    fig, ax = plt.subplots(figsize=(6, 4))
    Rs = sorted({row["R"] for row in rows})
    for R in Rs:
        sub = sorted((r for r in rows if r["R"] == R), key=lambda r: r["d"])
        ax.plot([r["d"] for r in sub], [r["rmse"] for r in sub], "o-", label=f"fitted, R={R}")
        ax.plot([r["d"] for r in sub], [r["rmse_uncorrected"] for r in sub], "x--", alpha=0.6, label=f"uncorrected, R={R}")
    ax.set_xlabel("d [um]")
    ax.set_ylabel("per-slot count RMSE")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_table4(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    Ds = sorted({row["D"] for row in rows})
    for D in Ds:
        sub = sorted((r for r in rows if r["D"] == D), key=lambda r: r["d"])
        ax.semilogy([r["d"] for r in sub], [r["rmse"] for r in sub], "o-", label=f"D={D}")
    ax.set_xlabel("d [um]")
    ax.set_ylabel("analytic-vs-numeric impulse RMSE")
    ax.legend()
    _save(fig, path)


def plot_fig4(tables, path):
    """tables: {case: list of (M, nmse, crlb)} for cases d, D, joint_d, joint_D."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), sharey=True)
    panels = [("d", ["d"]), ("D", ["D"]), ("joint", ["joint_d", "joint_D"])]
    for ax, (title, cases) in zip(axes, panels):
        for case in cases:
            rows = tables[case]
            M = [r[0] for r in rows]
            ax.semilogy(M, [r[1] for r in rows], "o-", label=f"NMSE {case}")
            ax.semilogy(M, [r[2] for r in rows], "--", label=f"CRLB {case}")
        ax.set_title(f"case: unknown {title}")
        ax.set_xlabel("M")
        ax.legend(fontsize=7)
    axes[0].set_ylabel("normalized error")
    _save(fig, path)


def plot_rates(t, first, second, labels, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, first, lw=1.0, label=labels[0])
    ax.plot(t, second, "--", lw=1.2, label=labels[1])
    ax.set_xlabel("t [s]")
    ax.set_ylabel("absorption rate [1/s]")
    ax.legend()
    _save(fig, path)
