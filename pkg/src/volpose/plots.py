"""Report figures rendered with the Agg backend.

PNG metadata is stripped so that identical data produce identical files.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def entropy_histogram(groups: Mapping[str, Sequence[float]], edges: np.ndarray, path,
                      threshold: float | None = None) -> None:
    """Overlaid histograms of person uncertainty per group."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in groups.items():
        ax.hist(np.asarray(vals, dtype=float), bins=edges, alpha=0.6, label=name)
    if threshold is not None:
        ax.axvline(threshold, color="k", linestyle="--", label=f"lambda = {threshold:g}")
    ax.set_xlabel("person uncertainty (nats)")
    ax.set_ylabel("persons")
    ax.legend()
    _save(fig, path)


def error_histogram(errors_mm: Sequence[float], path, label: str = "MPJPE (mm)") -> None:
    vals = np.asarray(errors_mm, dtype=float)
    vals = vals[np.isfinite(vals)]
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(vals):
        ax.hist(vals, bins=min(30, max(5, len(vals) // 3)))
    ax.set_xlabel(label)
    ax.set_ylabel("persons")
    _save(fig, path)


def scatter(x: Sequence[float], y: Sequence[float], labels: Sequence[str], path,
            xlabel: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    labels = np.asarray(labels)
    for name in sorted(set(labels.tolist())):
        m = labels == name
        ax.scatter(x[m], y[m], s=10, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_yscale("symlog", linthresh=10.0)
    ax.legend()
    _save(fig, path)
