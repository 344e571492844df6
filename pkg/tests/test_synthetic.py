import numpy as np
import pytest

from modeforge.clustering import cluster_features
from modeforge.synthetic import (
    BenchmarkSpec,
    generate_benchmark,
    load_spec,
    mode_recovery_score,
    raw_features,
)


def test_exact_counts_and_labels():
    ws, manifest = generate_benchmark(BenchmarkSpec(counts={"straight": 90, "arc-left": 10}))
    assert len(ws) == 100 and manifest["n"] == 100
    assert sum(w.label == "arc-left" for w in ws) == 10


def test_zero_noise_straight_is_constant_velocity():
    ws, _ = generate_benchmark(BenchmarkSpec(counts={"straight": 5}, noise_std=0.0))
    for w in ws:
        d = np.concatenate([w.obs, w.fut])
        assert np.allclose(d, d[0], atol=1e-12)


def _fit_circle(p):
    a = np.column_stack([2 * p, np.ones(len(p))])
    b = (p**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:2]
    return c, np.sqrt(sol[2] + c @ c)


def _positions(w):
    before = w.origin - np.cumsum(w.obs[::-1], axis=0)[::-1]
    after = w.origin + np.cumsum(np.concatenate([np.zeros((1, 2)), w.fut]), axis=0)
    return np.vstack([before, after])


def test_arc_lies_on_circle_of_radius_inverse_curvature():
    kappa, noise = 0.18, 0.02
    spec = dict(counts={"arc-left": 5}, templates={"arc-left": {"curvature": (kappa, kappa)}})
    clean, _ = generate_benchmark(BenchmarkSpec(noise_std=0.0, **spec))
    noisy, _ = generate_benchmark(BenchmarkSpec(noise_std=noise, **spec))
    for wc, wn in zip(clean, noisy):
        center, radius = _fit_circle(_positions(wc))
        assert radius == pytest.approx(1 / kappa, abs=1e-5)
        # noise is added after the path is drawn, so both share one circle
        resid = np.linalg.norm(_positions(wn) - center, axis=1) - 1 / kappa
        assert np.all(np.abs(resid) < 3 * noise)


def test_deterministic_under_seed():
    a, _ = generate_benchmark(BenchmarkSpec(seed=3))
    b, _ = generate_benchmark(BenchmarkSpec(seed=3))
    assert all(x == y for x, y in zip(a, b))


def test_count_key_order_does_not_change_tracks():
    counts = {"straight": 5, "arc-left": 4, "u-turn": 3}
    a, _ = generate_benchmark(BenchmarkSpec(counts=counts))
    b, _ = generate_benchmark(BenchmarkSpec(counts=dict(sorted(counts.items()))))
    key = lambda ws: sorted((w.source_id, w.obs.tobytes(), w.fut.tobytes()) for w in ws)
    assert key(a) == key(b)


def test_negative_count_rejected():
    with pytest.raises(ValueError):
        BenchmarkSpec(counts={"straight": -1})


def test_recovery_score_examples():
    labels = ["a"] * 5 + ["b"] * 5
    assert mode_recovery_score([7] * 5 + [3] * 5, labels) == 1.0
    assert mode_recovery_score([0] * 10, labels) <= 0


def test_recovery_null_distribution():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 5, 500)
    scores = [mode_recovery_score(rng.integers(0, 5, 500), labels) for _ in range(1000)]
    assert abs(np.mean(scores)) < 0.05


def test_raw_feature_separability():
    counts = {"straight": 100, "arc-left": 100, "arc-right": 100, "stop-and-go": 100, "u-turn": 100}
    ws, _ = generate_benchmark(BenchmarkSpec(counts=counts, noise_std=0.02))
    state = cluster_features(raw_features(ws), 5, seed=0)
    assert mode_recovery_score(state.labels, [w.label for w in ws]) >= 0.9


def test_checked_in_specs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    spec = load_spec(root / "benchmark_train.yaml")
    assert sum(spec.counts.values()) == 1000
