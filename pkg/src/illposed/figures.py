"""PNG rendering of experiment outputs.

Uses the non-interactive Agg backend so rendering works headless; every
function writes a file and returns its path.  Figures are a convenience view
of the CSVs, never the data of record.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["save_trajectory_figure", "save_spectrum_figure", "save_table_figure"]

_DPI = 120


def save_trajectory_figure(
    path: str,
    epochs: np.ndarray,
    curves: Dict[str, np.ndarray],
    title: str = "",
) -> str:
    """Log-log plot of per-epoch curves (squared error, residuals, bias/variance).

    Curves that are entirely non-finite or non-positive are skipped; so are
    epoch-0 samples (log scale).
    """
    epochs = np.asarray(epochs, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    drew = False
    for label, values in curves.items():
        v = np.asarray(values, dtype=float)
        mask = (epochs > 0) & np.isfinite(v) & (v > 0)
        if not np.any(mask):
            continue
        ax.loglog(epochs[mask], v[mask], label=label)
        drew = True
    ax.set_xlabel("epoch")
    ax.set_ylabel("squared error / residual")
    if title:
        ax.set_title(title, fontsize=9)
    if drew:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_spectrum_figure(
    path: str,
    name: str,
    sigma: np.ndarray,
    rank: Optional[int] = None,
) -> str:
    """Semilog plot of a singular-value spectrum, with an optional rank marker."""
    sigma = np.asarray(sigma, dtype=float)
    idx = np.arange(1, sigma.size + 1)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    positive = sigma > 0
    ax.semilogy(idx[positive], sigma[positive], marker=".", linestyle="-")
    if rank is not None and 1 <= rank <= sigma.size:
        ax.axvline(rank, color="tab:red", linestyle="--", alpha=0.7,
                   label=f"rank {rank}")
        ax.legend(fontsize=8)
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_title(f"{name}: singular values", fontsize=9)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_table_figure(
    path: str,
    row_labels: Sequence[str],
    method_errors: Dict[str, Sequence[float]],
    title: str = "",
) -> str:
    """Grouped bar chart of best errors per table row and method (log scale)."""
    n_rows = len(row_labels)
    methods = list(method_errors)
    width = 0.8 / max(1, len(methods))
    x = np.arange(n_rows, dtype=float)
    fig, ax = plt.subplots(figsize=(max(6.4, 0.9 * n_rows), 4.5))
    for j, m in enumerate(methods):
        vals = np.asarray(
            [v if v is not None else np.nan for v in method_errors[m]], dtype=float
        )
        vals = np.where(np.isfinite(vals), vals, np.nan)
        ax.bar(x + (j - (len(methods) - 1) / 2.0) * width, vals, width, label=m)
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(row_labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("best error")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
