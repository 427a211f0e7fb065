"""Static SVG figures for sweep and memory results.

Output is byte-stable for identical inputs: the SVG hash salt is fixed and the
date metadata is dropped.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

_RC = {"svg.hashsalt": "hybrid-reservoir", "svg.fonttype": "path", "font.size": 9}
_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def heatmap(ks, Hs, values, path) -> Path:
    """Median NRMSE over (k, H); one rectangle per cell, id ``cell-k{k}-H{H}``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(Hs) + 2), 0.45 * len(ks) + 1.6))
        finite = values[values == values]
        vmin, vmax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
        if vmax == vmin:
            vmax = vmin + 1.0
        norm = matplotlib.colors.Normalize(vmin, vmax)
        cmap = matplotlib.colormaps["viridis"]
        for i, k in enumerate(ks):
            for j, H in enumerate(Hs):
                v = values[i, j]
                color = cmap(norm(v)) if v == v else (0.8, 0.8, 0.8, 1.0)
                ax.add_patch(Rectangle((j, i), 1, 1, facecolor=color, edgecolor="white",
                                       linewidth=0.5, gid=f"cell-k{k}-H{H}"))
        ax.set_xlim(0, len(Hs))
        ax.set_ylim(0, len(ks))
        ax.set_xticks([j + 0.5 for j in range(len(Hs))], [str(H) for H in Hs])
        ax.set_yticks([i + 0.5 for i in range(len(ks))], [str(k) for k in ks])
        ax.set_xlabel("prediction horizon H")
        ax.set_ylabel("embedding depth k")
        fig.colorbar(matplotlib.cm.ScalarMappable(norm, cmap), ax=ax, label="median NRMSE")
        fig.tight_layout()
        return _save(fig, Path(path))


def k_sweep(ks, Hs, values, path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        for i, k in enumerate(ks):
            ax.plot(Hs, values[i], marker="o", markersize=3, label=f"k={k}")
        ax.set_xlabel("prediction horizon H")
        ax.set_ylabel("median NRMSE")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def correlation(series: dict, path) -> Path:
    """One line per k; series with no rows are drawn nowhere and left out of the legend."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        labelled = False
        for k in sorted(series):
            data = series[k]
            if len(data) == 0:
                continue
            ax.plot(data[:, 0], data[:, 1], marker="o", markersize=3, label=f"k={k}")
            labelled = True
        ax.set_xlabel("prediction horizon H")
        ax.set_ylabel("median correlation")
        if labelled:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def memory(d, r2, mc, path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.plot(d, r2, marker="o", markersize=3, label="R²(d)")
        h_star = 0.7 * mc
        ax.axvline(h_star, color="gray", linestyle="--", label=f"0.7·MC = {h_star:.1f}")
        ax.set_xlabel("delay d")
        ax.set_ylabel("R²")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"MC = {mc:.2f}")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))
