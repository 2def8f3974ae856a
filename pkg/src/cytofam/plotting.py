"""Static SVG figures: expression heatmaps, feature grids and K-selection curves.

Output is byte-deterministic: the SVG id salt is fixed and no date is written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "cytofam", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def row_order(lam: np.ndarray) -> np.ndarray:
    """Rows grouped by label, subpopulations in increasing order, noisy cells last."""
    lam = np.asarray(lam)
    key = np.where(lam == 0, lam.max() + 1, lam)
    return np.argsort(key, kind="stable")


def band_edges(lam_sorted: np.ndarray) -> np.ndarray:
    """Row positions where the label changes."""
    return np.flatnonzero(np.diff(lam_sorted)) + 1


def expression_heatmap(path, y, lam, markers=None, title=None, limit=4.0):
    """Cells ordered by label; blue low, red high, missing black, lines between bands.

    Returns the row-ordered matrix that was drawn.
    """
    y = np.asarray(y, dtype=float)
    order = row_order(lam)
    ys = y[order]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        cmap = plt.get_cmap("bwr").copy()
        cmap.set_bad("black")
        im = ax.imshow(np.ma.masked_invalid(ys), aspect="auto", cmap=cmap, vmin=-limit, vmax=limit,
                       interpolation="nearest")
        for e in band_edges(np.asarray(lam)[order]):
            ax.axhline(e - 0.5, color="yellow", linewidth=1.0)
        ax.set_xlabel("markers")
        ax.set_ylabel("cells")
        if markers is not None:
            ax.set_xticks(range(len(markers)))
            ax.set_xticklabels(markers, rotation=90)
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        _save(fig, path)
    return ys


def feature_grid(path, Z, w, markers=None, title=None):
    """Binary marker-by-subpopulation grid, columns labelled with their weights."""
    Z = np.asarray(Z)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.0 + 0.45 * max(Z.shape[1], 1), 5))
        ax.imshow(Z, aspect="auto", cmap="Greys", vmin=0, vmax=1, interpolation="nearest")
        ax.set_xticks(range(Z.shape[1]))
        ax.set_xticklabels([f"{x:.3f}" for x in w], rotation=90)
        ax.set_xlabel("subpopulation weight")
        if markers is not None:
            ax.set_yticks(range(len(markers)))
            ax.set_yticklabels(markers)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def line_plot(path, x, y, xlabel, ylabel, annotate=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.plot(x, y, marker="o")
        if annotate is not None:
            for xi, yi, a in zip(x, y, annotate):
                ax.annotate(str(a), (xi, yi), textcoords="offset points", xytext=(4, 4))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        _save(fig, path)


def k_grid_figures(directory, report):
    """LPML and DIC against K, and LPML against the negligible-weight count."""
    d = Path(directory)
    K = report.K
    line_plot(d / "lpml.svg", K, report.column("lpml"), "K", "LPML")
    line_plot(d / "dic.svg", K, report.column("dic"), "K", "DIC")
    calib, lp = report.elbow_series()
    line_plot(d / "calibration.svg", calib, lp, "negligible weights", "LPML", annotate=K)
