import numpy as np
import pytest

from modeforge.core import InvalidInputError, RawTrajectory, TrackWindow
from modeforge.ingest import (
    PROFILES,
    DataError,
    DatasetProfile,
    SplitSpec,
    TabularSchema,
    downsample,
    interpolate_gaps,
    make_splits,
    preprocess,
    read_tabular_trajectories,
    smooth_moving_average,
    split_on_gaps,
    split_windows,
    window_parent,
)

THOR = PROFILES["thor"]


def traj(positions, period=0.4, eid="e", label="l"):
    positions = np.asarray(positions, dtype=float)
    return RawTrajectory(eid, label, np.arange(len(positions)) * period, positions)


def line(n, period=0.4, v=(1.0, 0.5)):
    t = np.arange(n) * period
    return RawTrajectory("e", "l", t, np.outer(t, v))


# -- reading -----------------------------------------------------------------


def write_csv(path, rows, header="timestamp,entity_id,label,x,y"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_read_single_entity(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["0,1,w,0,0", "0.1,1,w,1,0", "0.2,1,w,2,0"])
    (t,) = read_tabular_trajectories(p)
    assert len(t) == 3 and t.label == "w"


def test_read_sorts_by_time(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["0.2,1,w,2,0", "0,1,w,0,0", "0.1,1,w,1,0"])
    (t,) = read_tabular_trajectories(p)
    np.testing.assert_array_equal(t.timestamps, [0, 0.1, 0.2])
    np.testing.assert_array_equal(t.positions[:, 0], [0, 1, 2])


def test_blank_coordinate_is_missing(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["0,1,w,0,0", "0.1,1,w,,0", "0.2,1,w,2,0"])
    (t,) = read_tabular_trajectories(p)
    assert t.missing.tolist() == [False, True, False]


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_tabular_trajectories(tmp_path / "nope.csv")
    p = write_csv(tmp_path / "a.csv", ["0,1,0,0"], header="timestamp,entity_id,x,y")
    with pytest.raises(DataError, match="label"):
        read_tabular_trajectories(p)
    (tmp_path / "e.csv").write_text("")
    assert read_tabular_trajectories(tmp_path / "e.csv") == []


def test_custom_schema(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["0;7;v;1;2", "1;7;v;2;2"], header="time;id;role;px;py")
    schema = TabularSchema("time", "id", "role", "px", "py", ";")
    (t,) = read_tabular_trajectories(p, schema)
    assert t.entity_id == "7" and t.label == "v"


# -- downsampling --------------------------------------------------------------


def test_downsample_keeps_every_fourth():
    t = line(41, period=0.1)
    d = downsample(t, 0.4)
    assert len(d) == 11
    np.testing.assert_array_equal(d.timestamps, t.timestamps[::4])


def test_downsample_identity_and_idempotent():
    t = line(10, period=0.4)
    assert downsample(t, 0.4) is t
    d = downsample(line(41, period=0.1), 0.4)
    assert downsample(d, 0.4) is d


def test_downsample_rejects_finer_target():
    with pytest.raises(ValueError):
        downsample(line(10, period=0.4), 0.1)


# -- interpolation -------------------------------------------------------------


def test_midpoint_interpolation():
    out = interpolate_gaps(traj([(0, 0), (np.nan, np.nan), (2, 0)]))
    np.testing.assert_array_equal(out.positions[1], (1, 0))


def test_interpolation_identity_without_gaps():
    t = line(6)
    np.testing.assert_array_equal(interpolate_gaps(t).positions, t.positions)


def test_interpolation_exact_on_linear_motion(rng):
    for _ in range(200):
        n = int(rng.integers(5, 40))
        truth = line(n, v=rng.normal(size=2))
        pos = truth.positions.copy()
        knock = rng.random(n) < 0.3
        knock[0] = knock[-1] = False
        pos[knock] = np.nan
        out = interpolate_gaps(truth.replace(positions=pos))
        np.testing.assert_allclose(out.positions, truth.positions, atol=1e-12)


def test_interpolation_all_missing():
    with pytest.raises(InvalidInputError):
        interpolate_gaps(traj([(np.nan, np.nan)] * 3))


def test_leading_trailing_missing_trimmed():
    out = interpolate_gaps(traj([(np.nan, np.nan), (0, 0), (1, 1), (np.nan, np.nan)]))
    assert len(out) == 2


def test_long_gap_splits_trajectory():
    pos = [(i, 0) for i in range(5)] + [(np.nan, np.nan)] * 6 + [(i, 0) for i in range(5)]
    pieces = split_on_gaps(traj(pos), max_gap=2.0)
    assert [len(p) for p in pieces] == [5, 5]
    assert pieces[1].entity_id == "e#1"


# -- smoothing -------------------------------------------------------------------


def test_zigzag_three_tap_mean():
    out = smooth_moving_average(traj([(0, 0), (1, 1), (2, 0), (3, 1)]), 0.8)
    # 3-tap means: ((0+1+2)/3, (0+1+0)/3) and ((1+2+3)/3, (1+0+1)/3)
    np.testing.assert_allclose(out.positions[1], (1, 1 / 3), atol=1e-12)
    np.testing.assert_allclose(out.positions[2], (2, 2 / 3), atol=1e-12)
    # edges shrink to a single tap
    np.testing.assert_array_equal(out.positions[0], (0, 0))
    np.testing.assert_array_equal(out.positions[3], (3, 1))


def test_smoothing_constant_and_narrow_window():
    c = traj([(2, 3)] * 6)
    np.testing.assert_array_equal(smooth_moving_average(c, 0.8).positions, c.positions)
    z = traj([(0, 0), (1, 1), (2, 0)])
    np.testing.assert_array_equal(smooth_moving_average(z, 0.3).positions, z.positions)


def test_smoothing_rejects_bad_window():
    with pytest.raises(ValueError):
        smooth_moving_average(line(5), 0.0)


# -- windows and splits --------------------------------------------------------------


@pytest.mark.parametrize("steps,stride,expected", [(20, None, 1), (19, None, 0), (50, 1, 31)])
def test_window_counts(steps, stride, expected):
    profile = DatasetProfile("p", 0.4, 8, 12, window_stride=stride)
    # a trajectory of ``steps`` displacement steps has steps + 1 samples
    ws = split_windows(line(steps + 1), profile)
    assert len(ws) == expected
    assert all(w.obs_len == 8 and w.pred_len == 12 for w in ws)


def test_window_origin_is_last_observed():
    t = line(21)
    (w,) = split_windows(t, THOR)
    np.testing.assert_allclose(w.origin, t.positions[8])
    np.testing.assert_allclose(w.future_positions(), t.positions[9:])


def test_preprocess_deterministic_and_valid(rng):
    raw = []
    for i in range(6):
        n = 200
        pos = np.cumsum(rng.normal(scale=0.05, size=(n, 2)), axis=0)
        pos[rng.random(n) < 0.05] = np.nan
        raw.append(RawTrajectory(f"e{i}", "ab"[i % 2], np.arange(n) * 0.1, pos))
    a, b = preprocess(raw, THOR), preprocess(raw, THOR)
    assert a == b and len(a) > 0
    assert all(np.isfinite(w.obs).all() and w.obs.shape == (8, 2) and w.fut.shape == (12, 2) for w in a)


def test_preprocess_skips_single_detection():
    raw = [RawTrajectory("x", "l", [0.0, 0.1], [(0, 0), (np.nan, np.nan)])]
    assert preprocess(raw, THOR) == []


def _pool(n_per_label, per_source=2):
    ws = []
    for label, n in n_per_label.items():
        for i in range(n):
            ws.append(TrackWindow((0, 0), np.full((2, 2), i), np.ones((3, 2)), label, f"{label}{i // per_source}@{i}"))
    return ws


def test_split_counts_and_disjointness():
    ws = _pool({"A": 10, "B": 10})
    train, val, test = make_splits(ws, SplitSpec({"A": 2, "B": 1}, seed=3))
    assert sum(w.label == "A" for w in train) == 2 and sum(w.label == "B" for w in train) == 1
    ids = [w.source_id for w in train + val + test]
    assert len(ids) == len(set(ids))
    assert set(ids) <= {w.source_id for w in ws}
    # no source trajectory straddles two splits
    parents = [{window_parent(w) for w in s} for s in (train, val, test)]
    assert not (parents[0] & parents[1] or parents[0] & parents[2] or parents[1] & parents[2])


def test_split_deterministic():
    ws = _pool({"A": 10, "B": 10})
    spec = SplitSpec({"A": 3, "B": 2}, seed=9)
    assert make_splits(ws, spec) == make_splits(ws, spec)


def test_split_shortfall_names_label():
    with pytest.raises(DataError, match="'B'.*short by 4"):
        make_splits(_pool({"A": 10, "B": 1}), SplitSpec({"A": 1, "B": 5}))


def test_split_large_label_counts():
    ws = _pool({"av": 3000, "agents": 3000, "others": 600}, per_source=1)
    train, _, _ = make_splits(ws, SplitSpec({"av": 2600, "agents": 2600, "others": 526}))
    assert len(train) == 5726
    assert sum(w.label == "others" for w in train) == 526
