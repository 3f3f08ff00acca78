"""Figure rendering for the report paths.

Every figure is written next to its delimited table; nothing is shown
interactively.  Figures carry no timestamps so reruns produce stable files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_trace_figure", "save_kde_overlays", "save_relative_bars",
           "save_sampling_fraction_figure", "save_scaling_figure"]

_SAVE_OPTS = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_trace_figure(trace, path):
    """Parameter traces with the burn-in shaded, one row per parameter."""
    p = trace.theta.shape[1]
    fig, axes = plt.subplots(p, 1, figsize=(8, 2.2 * p), squeeze=False)
    for j in range(p):
        ax = axes[j, 0]
        ax.plot(trace.theta[:trace.completed, j], lw=0.5)
        if trace.burnin:
            ax.axvspan(0, trace.burnin, color="0.85", zorder=0)
        ax.set_ylabel(trace.param_names[j])
    axes[-1, 0].set_xlabel("iteration")
    _finish(fig, path)


def save_kde_overlays(density_rows, param_names, path):
    """Overlaid marginal densities from a density_table row list."""
    p = len(param_names)
    fig, axes = plt.subplots(1, p, figsize=(4.0 * p, 3.2), squeeze=False)
    by_key = {}
    for j, label, grid, dens in density_rows:
        by_key.setdefault((j, label), []).append((grid, dens))
    labels = sorted({label for (_, label) in by_key})
    for j in range(p):
        ax = axes[0, j]
        for label in labels:
            pts = by_key.get((j, label))
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=str(label), lw=1.2)
        ax.set_xlabel(param_names[j])
        if j == 0:
            ax.set_ylabel("density")
    axes[0, -1].legend(fontsize=8)
    _finish(fig, path)


def save_relative_bars(rows, value_key, path, title):
    """Grouped bars of a per-parameter relative measure by run label."""
    labels = sorted({r["label"] for r in rows})
    params = sorted({r["param"] for r in rows})
    width = 0.8 / max(1, len(labels))
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(params), 3.4))
    x = np.arange(len(params), dtype=float)
    for i, label in enumerate(labels):
        vals = [next((r[value_key] for r in rows
                      if r["label"] == label and r["param"] == p), np.nan)
                for p in params]
        ax.bar(x + i * width, vals, width, label=str(label))
    ax.axhline(1.0, color="k", lw=0.6, ls=":")
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(params, fontsize=8)
    ax.set_ylabel(title)
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_sampling_fraction_figure(trace, path):
    """Sampling fraction and estimator variance along the iterations."""
    it = np.arange(trace.completed)
    f = trace.m[:trace.completed] / trace.population_size
    fig, ax1 = plt.subplots(figsize=(8, 3.2))
    ax1.plot(it, f, lw=0.6, color="tab:blue")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("sampling fraction m/n", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(it, trace.sigma2_first[:trace.completed], lw=0.6, ls="--",
             color="tab:red")
    ax2.set_ylabel("variance at proposal (pre-adaptation)", color="tab:red")
    if np.nanmax(trace.sigma2_first[:trace.completed]) > 0:
        ax2.set_yscale("log")
    _finish(fig, path)


def save_scaling_figure(rows, path):
    """Log-log fractional error against subsample size, one line per theta."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    theta_ids = sorted({r["theta_index"] for r in rows})
    for t in theta_ids:
        pts = [(r["m"], r["error"]) for r in rows if r["theta_index"] == t]
        pts.sort()
        ms = [p[0] for p in pts]
        errs = [max(p[1], 1e-16) for p in pts]
        ax.loglog(ms, errs, "o-", ms=3, lw=1, label=f"theta {t}")
    ax.set_xlabel("subsample size m")
    ax.set_ylabel("fractional error")
    ax.legend(fontsize=8)
    _finish(fig, path)
