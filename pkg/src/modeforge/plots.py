"""Static qualitative figures: forecast overlays, per-cluster galleries and
wrong-mode comparisons."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import TrackWindow, displacements_to_positions  # noqa: E402


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(name))


def overlay_path(out_dir, experiment: str, window_id: str) -> Path:
    return Path(out_dir) / f"{_safe(experiment)}__overlay__{_safe(window_id)}.png"


def gallery_path(out_dir, experiment: str, cluster: int) -> Path:
    return Path(out_dir) / f"{_safe(experiment)}__cluster-{cluster}.png"


def wrong_mode_path(out_dir, experiment: str, window_id: str) -> Path:
    return Path(out_dir) / f"{_safe(experiment)}__modes__{_safe(window_id)}.png"


def plot_overlay(window: TrackWindow, predictions: Mapping[str, np.ndarray], path) -> list[str]:
    """Observed track, ground truth and one curve per method. Returns curve labels."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(*window.observed_positions().T, "k.-", label="observed")
    gt = np.vstack([window.origin, window.future_positions()])
    ax.plot(*gt.T, "g.-", label="ground truth")
    labels = ["ground truth"]
    for name, displ in predictions.items():
        pos = np.vstack([window.origin, displacements_to_positions(window.origin, displ)])
        ax.plot(*pos.T, ".--", label=name)
        labels.append(name)
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7)
    ax.set_title(window.source_id, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)
    return labels


def plot_gallery(windows: Sequence[TrackWindow], title: str, path) -> None:
    """Full real tracks translated to start at the origin; crosses mark the start."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for w in windows:
        pos = np.vstack([w.observed_positions(), w.future_positions()])
        pos = pos - pos[0]
        ax.plot(*pos.T, "-", lw=0.8, alpha=0.7)
        ax.plot(0.0, 0.0, "kx")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)


def qualitative_export(
    out_dir,
    experiment: str,
    windows: Sequence[TrackWindow],
    predictions: Optional[Mapping[str, np.ndarray]] = None,
    clusters: Optional[np.ndarray] = None,
    k: Optional[int] = None,
    mode_predictions: Optional[Mapping[int, np.ndarray]] = None,
    overlay_ids: Optional[Sequence[int]] = None,
    gallery_size: int = 30,
) -> list[Path]:
    """Write the requested figures and return their paths.

    ``predictions`` maps method name to ``(n, h, 2)`` displacements over
    ``windows``; ``clusters`` holds a cluster id per window (galleries for
    ``k`` clusters); ``mode_predictions`` maps a conditioning cluster to
    ``(n, h, 2)`` displacements for the wrong-mode comparison.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    chosen = list(overlay_ids) if overlay_ids is not None else list(range(min(4, len(windows))))
    if predictions:
        for i in chosen:
            p = overlay_path(out, experiment, windows[i].source_id)
            plot_overlay(windows[i], {m: v[i] for m, v in predictions.items()}, p)
            written.append(p)
    if clusters is not None:
        clusters = np.asarray(clusters)
        k = int(k if k is not None else clusters.max() + 1)
        for c in range(k):
            members = [windows[i] for i in np.flatnonzero(clusters == c)[:gallery_size]]
            p = gallery_path(out, experiment, c)
            plot_gallery(members, f"cluster {c} ({int((clusters == c).sum())} tracks)", p)
            written.append(p)
    if mode_predictions:
        for i in chosen:
            p = wrong_mode_path(out, experiment, windows[i].source_id)
            plot_overlay(windows[i], {f"mode {m}": v[i] for m, v in sorted(mode_predictions.items())}, p)
            written.append(p)
    return written
