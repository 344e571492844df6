"""ADE/FDE metrics and the overall / per-label / per-cluster report hierarchy."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import TrackWindow, stack_windows

METRIC_MODES = ("mean", "rmse")


def _pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.shape[-1] != 2 or pred.shape[-2] == 0:
        raise ValueError("expected non-empty (..., steps, 2) position arrays")
    return pred, true


def ade(pred, true, mode: str = "mean"):
    """Average displacement error over the last two axes ``(steps, 2)``.

    ``mean``: mean per-step Euclidean distance.  ``rmse``: square root of the
    mean squared per-step distance.  Batched inputs give one value per sample.
    """
    pred, true = _pair(pred, true)
    dist = np.linalg.norm(pred - true, axis=-1)
    if mode == "mean":
        return dist.mean(axis=-1)
    if mode == "rmse":
        return np.sqrt((dist**2).mean(axis=-1))
    raise ValueError(f"unknown metric mode {mode!r}")


def fde(pred, true):
    pred, true = _pair(pred, true)
    return np.linalg.norm(pred[..., -1, :] - true[..., -1, :], axis=-1)


def decode(origins: np.ndarray, displ: np.ndarray) -> np.ndarray:
    """Batched cumulative sum of displacements anchored at each origin."""
    return origins[:, None, :] + np.cumsum(displ, axis=1)


def per_window_errors(windows: Sequence[TrackWindow], pred_displ: np.ndarray, mode: str = "mean"):
    origins, _, fut = stack_windows(windows)
    if len(windows) == 0:
        return np.zeros(0), np.zeros(0)
    pred_pos = decode(origins, np.asarray(pred_displ, dtype=np.float64))
    true_pos = decode(origins, fut)
    return ade(pred_pos, true_pos, mode), fde(pred_pos, true_pos)


@dataclass
class GroupMetrics:
    ade: Optional[float]
    fde: Optional[float]
    n: int

    @classmethod
    def of(cls, ade_vals: np.ndarray, fde_vals: np.ndarray) -> "GroupMetrics":
        if len(ade_vals) == 0:
            return cls(None, None, 0)
        return cls(float(np.mean(ade_vals)), float(np.mean(fde_vals)), int(len(ade_vals)))


@dataclass
class RunReport:
    """Metrics of one model on one test set: ``groups[partition][group]``."""

    model: str
    seed: int
    metric_mode: str
    overall: GroupMetrics
    groups: dict[str, dict[str, GroupMetrics]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        groups = {p: {g: GroupMetrics(**m) for g, m in gs.items()} for p, gs in d["groups"].items()}
        return cls(d["model"], d["seed"], d["metric_mode"], GroupMetrics(**d["overall"]), groups)


def evaluate_predictions(
    windows: Sequence[TrackWindow],
    pred_displ: np.ndarray,
    partitions: Optional[Mapping[str, Sequence]] = None,
    model: str = "",
    seed: int = 0,
    metric_mode: str = "mean",
) -> RunReport:
    """Score predictions overall and within every partition.

    ``partitions`` maps a partition name (``label``, ``cluster``) to one group
    key per window.
    """
    a, f = per_window_errors(windows, pred_displ, metric_mode)
    report = RunReport(model, seed, metric_mode, GroupMetrics.of(a, f))
    for name, keys in (partitions or {}).items():
        if len(keys) != len(windows):
            raise ValueError(f"partition {name!r} has {len(keys)} keys for {len(windows)} windows")
        idx: dict[str, list[int]] = defaultdict(list)
        for i, key in enumerate(keys):
            idx[str(key)].append(i)
        report.groups[name] = {g: GroupMetrics.of(a[ii], f[ii]) for g, ii in sorted(idx.items())}
    return report


def evaluate_model(
    predictor,
    windows: Sequence[TrackWindow],
    partitions: Optional[Mapping[str, Sequence]] = None,
    z_seed: int = 0,
    metric_mode: str = "mean",
    model: str = "",
    seed: int = 0,
    include_label: bool = True,
) -> RunReport:
    """Predict every window (one latent draw each under ``z_seed``) and score."""
    parts = dict(partitions or {})
    if include_label and "label" not in parts:
        parts["label"] = [w.label for w in windows]
    pred = predictor.predict_windows(windows, z_seed=z_seed)
    return evaluate_predictions(windows, pred, parts, model or getattr(predictor, "name", ""), seed, metric_mode)


@dataclass
class CellStats:
    mean: Optional[float]
    std: Optional[float]
    runs: int

    def format(self, digits: int = 3) -> str:
        if self.mean is None:
            return "-"
        return f"{self.mean:.{digits}f}±{self.std:.{digits}f}"


def mean_std(values: Sequence[float]) -> CellStats:
    vals = [v for v in values if v is not None]
    if not vals:
        return CellStats(None, None, 0)
    arr = np.asarray(sorted(vals), dtype=np.float64)  # sorted: order-independent summation
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return CellStats(float(arr.mean()), std, len(arr))


@dataclass
class AggregateReport:
    """Mean and sample standard deviation across runs, per cell."""

    model: str
    metric_mode: str
    runs: int
    overall: dict[str, CellStats]
    groups: dict[str, dict[str, dict[str, CellStats]]]

    def to_dict(self) -> dict:
        return asdict(self)

    def cell(self, partition: Optional[str], group: Optional[str], metric: str) -> CellStats:
        if partition is None:
            return self.overall[metric]
        return self.groups[partition][group][metric]


def aggregate_runs(reports: Sequence[RunReport]) -> AggregateReport:
    if not reports:
        raise ValueError("nothing to aggregate")
    modes = {r.metric_mode for r in reports}
    if len(modes) != 1:
        raise ValueError(f"cannot aggregate mixed metric modes {modes}")
    overall = {m: mean_std([getattr(r.overall, m) for r in reports]) for m in ("ade", "fde")}
    groups: dict[str, dict[str, dict[str, CellStats]]] = {}
    for part in sorted({p for r in reports for p in r.groups}):
        keys = sorted({g for r in reports for g in r.groups.get(part, {})})
        groups[part] = {}
        for g in keys:
            cells = [r.groups.get(part, {}).get(g) for r in reports]
            groups[part][g] = {
                m: mean_std([getattr(c, m) for c in cells if c is not None]) for m in ("ade", "fde")
            }
    return AggregateReport(reports[0].model, modes.pop(), len(reports), overall, groups)


def format_table(
    aggregates: Sequence[AggregateReport], partition: Optional[str] = None, title: str = "", counts=None
) -> str:
    """Aligned text table: one column per model, ADE over FDE per row."""
    names = [a.model for a in aggregates]
    if partition is None:
        rows = [("overall", None)]
    else:
        keys = sorted({g for a in aggregates for g in a.groups.get(partition, {})}, key=_natural)
        rows = [(g, g) for g in keys]
    header = f"{partition or 'set':<16}" + "".join(f"{n:>18}" for n in names)
    lines = ([title] if title else []) + [header, "-" * len(header)]
    for label, g in rows:
        tag = label if counts is None or g not in counts else f"{label} ({counts[g]})"
        for metric in ("ade", "fde"):
            cells = []
            for a in aggregates:
                try:
                    cells.append(a.cell(partition, g, metric).format())
                except KeyError:
                    cells.append("-")
            lines.append(f"{(tag if metric == 'ade' else ''):<16}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


def _natural(key: str):
    return (0, int(key), "") if key.isdigit() else (1, 0, key)


def dump_json(obj, path) -> None:
    from pathlib import Path

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o)}")
