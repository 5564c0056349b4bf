"""Dataset statistics figures: attribute prevalence and co-occurrence."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402


def attribute_bar(counts, names, path, title="Attribute prevalence") -> None:
    """Horizontal bar chart of per-attribute positive counts."""
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(7, max(3.0, 0.18 * len(names))))
    ax.barh(np.arange(len(names)), counts, color="#4c72b0")
    ax.set_yticks(np.arange(len(names)), names, fontsize=6)
    ax.invert_yaxis()
    ax.set_xlabel("positive samples")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cooccurrence_heatmap(matrix, names, path, title="Attribute co-occurrence") -> None:
    """Log-scale heatmap; zero cells are left blank."""
    m = np.asarray(matrix, dtype=float)
    masked = np.ma.masked_less_equal(m, 0)
    vmax = max(float(m.max()), 1.0)
    fig, ax = plt.subplots(figsize=(9, 8))
    im = ax.imshow(masked, cmap="viridis", norm=LogNorm(vmin=1, vmax=max(vmax, 1.0 + 1e-9)))
    ticks = np.arange(len(names))
    ax.set_xticks(ticks, names, rotation=90, fontsize=5)
    ax.set_yticks(ticks, names, fontsize=5)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="count (log)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
