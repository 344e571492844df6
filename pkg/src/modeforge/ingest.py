"""Dataset readers and the preprocessing pipeline.

Order for resampled profiles: downsample -> split on long gaps -> interpolate
-> smooth -> window.  Profiles with ``resample=False`` go straight to windowing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInputError, RawTrajectory, TrackWindow, positions_to_displacements


class DataError(Exception):
    """Unreadable or insufficient input data."""


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    sample_period: float
    obs_len: int
    pred_len: int
    smoothing_window: Optional[float] = None
    window_stride: Optional[int] = None
    resample: bool = True
    max_gap: float = 2.0

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.obs_len < 1 or self.pred_len < 1:
            raise ValueError("obs_len and pred_len must be >= 1")

    @property
    def stride(self) -> int:
        return self.window_stride if self.window_stride else self.obs_len + self.pred_len

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetProfile":
        return cls(**d)


PROFILES = {
    "thor": DatasetProfile("thor", sample_period=0.4, obs_len=8, pred_len=12, smoothing_window=0.8),
    "argoverse": DatasetProfile(
        "argoverse", sample_period=0.1, obs_len=20, pred_len=30, smoothing_window=None, resample=False
    ),
}


def get_profile(name_or_path: str) -> DatasetProfile:
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise KeyError(f"unknown profile {name_or_path!r} (known: {sorted(PROFILES)})")
    return DatasetProfile.from_dict(_load_structured(path))


def _load_structured(path: Path) -> dict:
    text = Path(path).read_text()
    if Path(path).suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


@dataclass
class TabularSchema:
    """Column mapping for a CSV-like export."""

    timestamp: str = "timestamp"
    entity_id: str = "entity_id"
    label: str = "label"
    x: str = "x"
    y: str = "y"
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict) -> "TabularSchema":
        return cls(**d)


def _parse_float(text) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        return math.nan
    return v if math.isfinite(v) else math.nan


def read_tabular_trajectories(path, schema: Optional[TabularSchema] = None) -> list[RawTrajectory]:
    """Group rows by entity id; unparseable coordinates become missing samples."""
    schema = schema or TabularSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    rows: dict[str, list] = defaultdict(list)
    labels: dict[str, str] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        if reader.fieldnames is None:
            return []
        needed = [schema.timestamp, schema.entity_id, schema.label, schema.x, schema.y]
        absent = [c for c in needed if c not in reader.fieldnames]
        if absent:
            raise DataError(f"{path}: missing column(s) {absent}; header is {reader.fieldnames}")
        for lineno, row in enumerate(reader, 2):
            try:
                ts = float(row[schema.timestamp])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: bad timestamp {row[schema.timestamp]!r}") from None
            eid = row[schema.entity_id]
            labels.setdefault(eid, row[schema.label])
            x, y = _parse_float(row[schema.x]), _parse_float(row[schema.y])
            if math.isnan(x) or math.isnan(y):
                x = y = math.nan
            rows[eid].append((ts, x, y))
    out = []
    for eid, samples in rows.items():
        samples.sort(key=lambda s: s[0])
        arr = np.array(samples, dtype=np.float64)
        ts, keep = np.unique(arr[:, 0], return_index=True)
        arr = arr[keep]
        out.append(RawTrajectory(eid, labels[eid], ts, arr[:, 1:]))
    return out


def native_period(traj: RawTrajectory) -> float:
    if len(traj) < 2:
        raise InvalidInputError(f"{traj.entity_id!r}: cannot infer a sample period from <2 samples")
    return float(np.median(np.diff(traj.timestamps)))


def downsample(traj: RawTrajectory, target_period: float) -> RawTrajectory:
    """Keep every n-th sample, n = round(target / native median interval)."""
    period = native_period(traj)
    if target_period < period * (1 - 1e-6):
        raise ValueError(f"target period {target_period} s is finer than native period {period} s")
    n = max(1, int(round(target_period / period)))
    if n == 1:
        return traj
    return traj.replace(timestamps=traj.timestamps[::n], positions=traj.positions[::n])


def trim_missing(traj: RawTrajectory) -> RawTrajectory:
    valid = np.flatnonzero(~traj.missing)
    if len(valid) == 0:
        raise InvalidInputError(f"{traj.entity_id!r}: every sample is missing")
    lo, hi = valid[0], valid[-1] + 1
    return traj.replace(timestamps=traj.timestamps[lo:hi], positions=traj.positions[lo:hi])


def split_on_gaps(traj: RawTrajectory, max_gap: float) -> list[RawTrajectory]:
    """Cut wherever consecutive valid samples are more than ``max_gap`` seconds apart."""
    traj = trim_missing(traj)
    valid = np.flatnonzero(~traj.missing)
    gaps = np.diff(traj.timestamps[valid])
    cuts = np.flatnonzero(gaps > max_gap + 1e-9)
    if len(cuts) == 0:
        return [traj]
    pieces = []
    start = valid[0]
    for j, c in enumerate(cuts):
        stop = valid[c] + 1
        pieces.append((start, stop))
        start = valid[c + 1]
    pieces.append((start, valid[-1] + 1))
    return [
        traj.replace(
            timestamps=traj.timestamps[a:b],
            positions=traj.positions[a:b],
            entity_id=f"{traj.entity_id}#{i}",
        )
        for i, (a, b) in enumerate(pieces)
    ]


def interpolate_gaps(traj: RawTrajectory) -> RawTrajectory:
    """Fill missing positions by linear interpolation in time."""
    traj = trim_missing(traj)
    miss = traj.missing
    if not miss.any():
        return traj
    ts = traj.timestamps
    pos = traj.positions.copy()
    good = ~miss
    for d in range(2):
        pos[miss, d] = np.interp(ts[miss], ts[good], pos[good, d])
    return traj.replace(positions=pos)


def smooth_moving_average(traj: RawTrajectory, window: float) -> RawTrajectory:
    """Centered moving average over ``window`` seconds, shrunk symmetrically at the edges.

    With a uniform period p the half-width in samples is ``floor(window / (2p))``;
    an 800 ms window at 400 ms sampling averages 3 taps.
    """
    if window <= 0:
        raise ValueError("smoothing window must be positive")
    if traj.missing.any():
        raise InvalidInputError("smoothing requires gap-free trajectories; interpolate first")
    n = len(traj)
    if n < 2:
        return traj
    half = int(math.floor(window / (2 * native_period(traj)) + 1e-9))
    if half == 0:
        return traj
    pos = traj.positions
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(pos, axis=0)])
    out = np.empty_like(pos)
    for i in range(n):
        r = min(half, i, n - 1 - i)
        out[i] = (csum[i + r + 1] - csum[i - r]) / (2 * r + 1)
    return traj.replace(positions=out)


def preprocess_trajectory(traj: RawTrajectory, profile: DatasetProfile) -> list[RawTrajectory]:
    if int((~traj.missing).sum()) < 2:
        raise InvalidInputError(f"{traj.entity_id!r}: fewer than 2 detections")
    if not profile.resample:
        return [interpolate_gaps(t) for t in split_on_gaps(traj, profile.max_gap)]
    traj = downsample(traj, profile.sample_period)
    out = []
    for piece in split_on_gaps(traj, profile.max_gap):
        piece = interpolate_gaps(piece)
        if profile.smoothing_window:
            piece = smooth_moving_average(piece, profile.smoothing_window)
        out.append(piece)
    return out


def split_windows(traj: RawTrajectory, profile: DatasetProfile) -> list[TrackWindow]:
    """Cut a preprocessed trajectory into (obs, fut) windows.

    A window spans ``obs_len + pred_len`` displacement steps, i.e.
    ``obs_len + pred_len + 1`` samples; the origin is sample ``obs_len``.
    """
    t, h = profile.obs_len, profile.pred_len
    span = t + h + 1
    if traj.missing.any():
        raise InvalidInputError("windowing requires gap-free trajectories")
    out = []
    for start in range(0, len(traj) - span + 1, profile.stride):
        seg = traj.positions[start : start + span]
        origin, displ = positions_to_displacements(seg, split_index=t)
        out.append(
            TrackWindow(
                origin=origin,
                obs=displ[:t],
                fut=displ[t:],
                label=traj.label,
                source_id=f"{traj.entity_id}@{start}",
            )
        )
    return out


def window_parent(w: TrackWindow) -> str:
    """Source trajectory id of a window (the part before ``@``)."""
    return w.source_id.rsplit("@", 1)[0]


@dataclass
class SplitSpec:
    """Per-label training counts plus validation/test sizes.

    ``val`` and ``test`` are fractions (< 1) of the windows left after the
    training draw, or absolute counts (>= 1).  ``None`` means "all remaining".
    """

    train_counts: dict[str, int]
    val: float = 0.5
    test: Optional[float] = None
    seed: int = 0
    group_by_source: bool = True

    def __post_init__(self):
        if any(c < 0 for c in self.train_counts.values()):
            raise ValueError("train counts must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)


def make_splits(windows: Sequence[TrackWindow], spec: SplitSpec):
    """Draw a label-constrained training set, then val/test from the remainder.

    With ``group_by_source`` the draw operates on source trajectories, so all
    windows of one trajectory land in the same split; training counts are
    then met exactly by taking windows of the sampled trajectories in order.
    """
    rng = np.random.default_rng(spec.seed)
    by_label: dict[str, list[int]] = defaultdict(list)
    for i, w in enumerate(windows):
        by_label[w.label].append(i)
    for label, want in spec.train_counts.items():
        have = len(by_label.get(label, []))
        if have < want:
            raise DataError(f"label {label!r}: requested {want} training windows, only {have} available (short by {want - have})")

    train_idx: list[int] = []
    rest_idx: list[int] = []
    for label in sorted(by_label):
        idx = by_label[label]
        want = spec.train_counts.get(label, 0)
        if spec.group_by_source:
            groups: dict[str, list[int]] = defaultdict(list)
            for i in idx:
                groups[window_parent(windows[i])].append(i)
            keys = sorted(groups)
            order = rng.permutation(len(keys))
            taken = []
            for j in order:
                g = groups[keys[j]]
                if len(taken) < want:
                    taken.extend(g)
                else:
                    rest_idx.extend(g)
            # a trajectory straddling the quota boundary donates its surplus windows to no split
            train_idx.extend(taken[:want])
        else:
            perm = rng.permutation(len(idx))
            train_idx.extend(idx[j] for j in perm[:want])
            rest_idx.extend(idx[j] for j in perm[want:])

    rest_idx.sort()
    if spec.group_by_source:
        groups = defaultdict(list)
        for i in rest_idx:
            groups[window_parent(windows[i])].append(i)
        keys = sorted(groups)
        order = [keys[j] for j in rng.permutation(len(keys))]
        n_total = len(rest_idx)
        val_target = _target(spec.val, n_total)
        val_idx, test_pool = [], []
        for key in order:
            (val_idx if len(val_idx) < val_target else test_pool).extend(groups[key])
    else:
        perm = rng.permutation(len(rest_idx))
        shuffled = [rest_idx[j] for j in perm]
        val_target = _target(spec.val, len(shuffled))
        val_idx, test_pool = shuffled[:val_target], shuffled[val_target:]
    test_target = _target(spec.test, len(test_pool)) if spec.test is not None else len(test_pool)
    test_idx = test_pool[:test_target]

    pick = lambda ids: [windows[i] for i in sorted(ids)]  # noqa: E731
    return pick(train_idx), pick(val_idx), pick(test_idx)


def _target(amount, n_total: int) -> int:
    if amount is None:
        return n_total
    if amount < 1:
        return int(round(amount * n_total))
    return min(int(amount), n_total)


def split_manifest(train, val, test, spec: SplitSpec, profile: DatasetProfile) -> dict:
    def counts(ws):
        c: dict[str, int] = defaultdict(int)
        for w in ws:
            c[w.label] += 1
        return dict(sorted(c.items()))

    return {
        "seed": spec.seed,
        "profile": profile.name,
        "profile_hash": profile.fingerprint(),
        "split_spec": asdict(spec),
        "counts": {"train": counts(train), "val": counts(val), "test": counts(test)},
    }


def preprocess(trajectories: Sequence[RawTrajectory], profile: DatasetProfile) -> list[TrackWindow]:
    windows = []
    for traj in trajectories:
        try:
            pieces = preprocess_trajectory(traj, profile)
        except InvalidInputError:
            continue
        for piece in pieces:
            if len(piece) >= 2:
                windows.extend(split_windows(piece, profile))
    return windows
