"""Trajectory value types and displacement/position conversions.

Positions are absolute (meters, world frame).  Windows store displacements in
meters per timestep; the timestep duration belongs to the dataset profile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives malformed trajectory data."""


def _as_points(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"{name} must have shape (n, 2), got {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RawTrajectory:
    """One tracked entity.  Missing detections are NaN rows in ``positions``."""

    entity_id: str
    label: str
    timestamps: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        pos = _as_points(self.positions, "positions")
        if len(ts) != len(pos):
            raise InvalidInputError("timestamps and positions differ in length")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise InvalidInputError(f"timestamps of {self.entity_id!r} are not strictly increasing")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "positions", _frozen(pos))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def missing(self) -> np.ndarray:
        return ~np.all(np.isfinite(self.positions), axis=1)

    def replace(self, timestamps=None, positions=None, entity_id=None) -> "RawTrajectory":
        return RawTrajectory(
            entity_id=self.entity_id if entity_id is None else entity_id,
            label=self.label,
            timestamps=self.timestamps if timestamps is None else timestamps,
            positions=self.positions if positions is None else positions,
        )


@dataclass(frozen=True)
class TrackWindow:
    """A single (observed, future) sample anchored at the last observed position."""

    origin: np.ndarray
    obs: np.ndarray
    fut: np.ndarray
    label: str
    source_id: str = ""

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(-1)
        if origin.shape != (2,):
            raise InvalidInputError("origin must be a 2D point")
        obs = _as_points(self.obs, "obs")
        fut = _as_points(self.fut, "fut")
        if len(obs) == 0 or len(fut) == 0:
            raise InvalidInputError("obs and fut must be non-empty")
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(fut)) and np.all(np.isfinite(origin))):
            raise InvalidInputError(f"window {self.source_id!r} contains non-finite values")
        object.__setattr__(self, "origin", _frozen(origin))
        object.__setattr__(self, "obs", _frozen(obs))
        object.__setattr__(self, "fut", _frozen(fut))

    @property
    def obs_len(self) -> int:
        return len(self.obs)

    @property
    def pred_len(self) -> int:
        return len(self.fut)

    def future_positions(self) -> np.ndarray:
        return displacements_to_positions(self.origin, self.fut)

    def observed_positions(self) -> np.ndarray:
        """Absolute observed positions, ending at ``origin``."""
        back = np.cumsum(self.obs[::-1], axis=0)[::-1]
        start = self.origin - back[0]
        return np.vstack([start, start + np.cumsum(self.obs, axis=0)])

    def __eq__(self, other):
        if not isinstance(other, TrackWindow):
            return NotImplemented
        return (
            self.label == other.label
            and self.source_id == other.source_id
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.obs, other.obs)
            and np.array_equal(self.fut, other.fut)
        )

    __hash__ = None


@dataclass(frozen=True)
class FullTrack:
    seq: np.ndarray

    def __len__(self) -> int:
        return len(self.seq)


@dataclass(frozen=True)
class ModeAssignment:
    cluster_id: int
    one_hot: np.ndarray
    clustering_round: int = 0

    def __post_init__(self):
        oh = np.asarray(self.one_hot, dtype=np.float64).reshape(-1)
        if np.count_nonzero(oh == 1.0) != 1 or np.count_nonzero(oh) != 1:
            raise InvalidInputError("one_hot must contain exactly one 1")
        if int(np.argmax(oh)) != self.cluster_id:
            raise InvalidInputError("cluster_id disagrees with one_hot")
        object.__setattr__(self, "one_hot", _frozen(oh))

    @classmethod
    def from_id(cls, cluster_id: int, k: int, clustering_round: int = 0) -> "ModeAssignment":
        return cls(int(cluster_id), one_hot(cluster_id, k), clustering_round)


def one_hot(cluster_id: int, k: int) -> np.ndarray:
    if not 0 <= cluster_id < k:
        raise InvalidInputError(f"cluster id {cluster_id} outside [0, {k})")
    vec = np.zeros(k)
    vec[cluster_id] = 1.0
    return vec


def one_hot_matrix(ids: Sequence[int], k: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise InvalidInputError(f"cluster ids outside [0, {k})")
    out = np.zeros((len(ids), k))
    out[np.arange(len(ids)), ids] = 1.0
    return out


def positions_to_displacements(positions, split_index: Optional[int] = None):
    """Difference consecutive positions.

    Returns ``(origin, displ)`` where ``displ[i] = positions[i+1] - positions[i]``.
    ``origin`` is ``positions[split_index]`` (the last observed position);
    without a split index it is the final position.
    """
    pts = _as_points(positions, "positions")
    if len(pts) < 2:
        raise InvalidInputError("need at least 2 positions")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("positions contain missing or non-finite entries")
    idx = len(pts) - 1 if split_index is None else split_index
    return pts[idx].copy(), np.diff(pts, axis=0)


def displacements_to_positions(origin, displ) -> np.ndarray:
    origin = np.asarray(origin, dtype=np.float64).reshape(2)
    d = _as_points(displ, "displ")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(origin))):
        raise InvalidInputError("displacements must be finite")
    return origin + np.cumsum(d, axis=0)


def concat_full_track(w: TrackWindow) -> FullTrack:
    return FullTrack(np.concatenate([w.obs, w.fut], axis=0))


def stack_windows(windows: Sequence[TrackWindow]):
    """Return ``(origins, obs, fut)`` arrays with a leading batch axis."""
    if not windows:
        return np.zeros((0, 2)), np.zeros((0, 0, 2)), np.zeros((0, 0, 2))
    origins = np.stack([w.origin for w in windows])
    obs = np.stack([w.obs for w in windows])
    fut = np.stack([w.fut for w in windows])
    return origins, obs, fut


def full_tracks(windows: Sequence[TrackWindow]) -> np.ndarray:
    _, obs, fut = stack_windows(windows)
    if len(windows) == 0:
        return np.zeros((0, 0, 2))
    return np.concatenate([obs, fut], axis=1)


# -- canonical on-disk window format (JSON lines) -----------------------------


def window_to_record(w: TrackWindow) -> dict:
    return {
        "source_id": w.source_id,
        "label": w.label,
        "origin_x": float(w.origin[0]),
        "origin_y": float(w.origin[1]),
        "obs": w.obs.tolist(),
        "fut": w.fut.tolist(),
    }


def window_from_record(rec: dict) -> TrackWindow:
    return TrackWindow(
        origin=(rec["origin_x"], rec["origin_y"]),
        obs=rec["obs"],
        fut=rec["fut"],
        label=str(rec["label"]),
        source_id=str(rec["source_id"]),
    )


def write_windows(path, windows: Iterable[TrackWindow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for w in windows:
            # json writes floats with repr(), which round-trips exactly
            fh.write(json.dumps(window_to_record(w)) + "\n")


def iter_windows(path) -> Iterator[TrackWindow]:
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield window_from_record(json.loads(line))
            except (KeyError, json.JSONDecodeError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad window record ({exc})") from exc


def read_windows(path) -> list[TrackWindow]:
    return list(iter_windows(path))


@dataclass
class LabelRegistry:
    """Ordered vocabulary of supervised labels for one dataset."""

    labels: list[str] = field(default_factory=list)

    @classmethod
    def from_windows(cls, windows: Iterable[TrackWindow]) -> "LabelRegistry":
        return cls(sorted({w.label for w in windows}))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}; known: {self.labels}") from None

    def __len__(self) -> int:
        return len(self.labels)
