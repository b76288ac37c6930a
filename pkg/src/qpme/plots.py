"""Figure rendering for run reports.

All functions write PNG files next to the CSV artifacts and never open a
display; the Agg backend is forced before pyplot is imported.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_loss_history(history, path):
    """Term-by-term training curves on a symlog scale."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    steps = np.asarray(history.step)
    for name in ("total", "objective", "boundary", "initial", "consistency"):
        series = np.asarray(getattr(history, name))
        if np.any(series != 0.0) or name == "total":
            ax.plot(steps, series, label=name, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss term")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_slice(grid, path, exact=None):
    """Heatmap of a 2D solution slice, or the line plot in one dimension;
    with an exact slice given, shows the pointwise difference alongside."""
    ax_pts = grid.axis_points
    if grid.values.ndim == 1:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ax_pts, grid.values, label="solution")
        if exact is not None:
            ax.plot(ax_pts, exact.values, "--", label="exact")
        ax.set_xlabel("x")
        ax.set_ylabel(f"u(t={grid.t:g}, x)")
        ax.legend()
    else:
        ncols = 2 if exact is not None else 1
        fig, axes = plt.subplots(1, ncols, figsize=(5.5 * ncols, 4.5),
                                 squeeze=False)
        extent = [ax_pts[0], ax_pts[-1], ax_pts[0], ax_pts[-1]]
        im = axes[0][0].imshow(grid.values.T, origin="lower", extent=extent)
        axes[0][0].set_title(f"u(t={grid.t:g}, x, y)")
        fig.colorbar(im, ax=axes[0][0])
        if exact is not None:
            diff = grid.values - exact.values
            im = axes[0][1].imshow(diff.T, origin="lower", extent=extent,
                                   cmap="RdBu_r")
            axes[0][1].set_title("difference to exact")
            fig.colorbar(im, ax=axes[0][1])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sample_projection(batch, path, max_points=5000):
    """Scatter of the first two spatial coordinates, colored by region."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    n = batch.x.shape[1]
    sel = slice(None) if n <= max_points else np.s_[:max_points]
    x = batch.x[0][sel]
    y = batch.x[1][sel] if batch.x.shape[0] > 1 else batch.t[sel]
    sc = ax.scatter(x, y, c=batch.region[sel], s=2, cmap="viridis")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2" if batch.x.shape[0] > 1 else "t")
    fig.colorbar(sc, ax=ax, label="region")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_snapshots(result, path):
    """Overlaid cross-sections u(t, x, 0) with the free-boundary series."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for t in sorted(result.snapshots):
        x, u = result.snapshots[t]
        ax1.plot(x, u, linewidth=0.8, label=f"t={t:g}")
    ax1.axvline(result.initial_radius, linestyle="--", color="gray",
                linewidth=0.8)
    ax1.axvline(-result.initial_radius, linestyle="--", color="gray",
                linewidth=0.8)
    ax1.set_xlabel("x")
    ax1.set_ylabel("u(t, x, 0)")
    if len(result.snapshots) <= 8:
        ax1.legend(fontsize=7)
    ax2.plot(result.times, result.radii, marker="o", markersize=3)
    ax2.set_xlabel("t")
    ax2.set_ylabel("support radius")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
