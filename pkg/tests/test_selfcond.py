import numpy as np
import pytest
import torch
from sklearn.metrics import adjusted_rand_score

from modeforge.adversarial import (
    GANConfig,
    adversarial_step,
    generator_adv_loss,
    generator_loss,
    make_optimizers,
)
from modeforge.clustering import (
    ClusteringState,
    cluster_features,
    greedy_match,
    recluster_and_match,
    refresh_centroids,
)
from modeforge.networks import DiscriminatorConfig, GeneratorConfig, init_params
from modeforge.selfcond import SelfCondConfig, extract_features, intra_cluster_metrics, train_selfcond
from modeforge.synthetic import BenchmarkSpec, generate_benchmark


def _blobs(k=4, per=50, seed=0, spread=0.1):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 10, size=(k, 6))
    truth = np.repeat(np.arange(k), per)
    return centers[truth] + rng.normal(0, spread, size=(k * per, 6)), truth, centers


@pytest.mark.parametrize("standardize", [False, True])
def test_blobs_recovered(standardize):
    x, truth, _ = _blobs()
    state = cluster_features(x, 4, seed=0, standardize=standardize)
    assert adjusted_rand_score(truth, state.labels) >= 0.99
    assert np.array_equal(state.assign(x), state.labels)


def test_k_one_and_k_n():
    x, _, _ = _blobs(k=2, per=5)
    one = cluster_features(x, 1)
    assert np.all(one.labels == 0) and np.allclose(one.centroids[0], x.mean(axis=0))
    full = cluster_features(x, len(x))
    assert len(set(full.labels.tolist())) == len(x)
    assert np.allclose(full.centroids[full.labels], x)


def test_too_few_samples():
    with pytest.raises(ValueError):
        cluster_features(np.zeros((2, 3)), 3)


def test_identity_relabeling_on_same_features():
    x, _, _ = _blobs()
    state = cluster_features(x, 4, standardize=True)
    again = recluster_and_match(state, x)
    assert np.array_equal(again.labels, state.labels) and again.round == state.round + 1


def test_permutation_recovered():
    _, _, centers = _blobs()
    perm = np.array([2, 0, 3, 1])
    found = greedy_match(centers, centers[perm])
    assert np.array_equal(found, perm)
    assert sorted(greedy_match(centers, np.random.default_rng(0).normal(size=(4, 6))).tolist()) == [0, 1, 2, 3]


def test_state_round_trip_and_refresh(tmp_path):
    x, _, _ = _blobs()
    state = cluster_features(x, 4, standardize=True)
    state.save(tmp_path / "c.json")
    loaded = ClusteringState.load(tmp_path / "c.json")
    assert np.array_equal(loaded.assign(x), state.labels)
    moved = refresh_centroids(state, x + 5.0)
    assert np.array_equal(moved.labels, state.labels)
    assert np.array_equal(moved.assign(x + 5.0), state.labels)


def _tiny():
    G = init_params(GeneratorConfig(3, 2, 4, 2, True, 2), 0)
    D = init_params(DiscriminatorConfig(3, 2, "mlp", 6, 4, False, 2), 1)
    g = torch.Generator().manual_seed(0)
    obs, fut = torch.randn(4, 3, 2, generator=g), torch.randn(4, 2, 2, generator=g)
    return G, D, obs, fut, torch.eye(2)[[0, 1, 0, 1]], torch.randn(4, 2, generator=g)


def test_step_changes_both_networks():
    G, D, obs, fut, mode, z = _tiny()
    g0 = [p.clone() for p in G.parameters()]
    d0 = [p.clone() for p in D.parameters()]
    opt_g, opt_d = make_optimizers(G, D, GANConfig())
    s = adversarial_step(G, D, opt_g, opt_d, obs, fut, z, mode)
    assert any(not torch.equal(a, b) for a, b in zip(g0, G.parameters()))
    assert any(not torch.equal(a, b) for a, b in zip(d0, D.parameters()))
    assert 0 < s.d_real < 1 and np.isfinite(s.d_loss)


def test_l2_weight_zero_isolates_adversarial_term():
    G, D, obs, fut, mode, z = _tiny()
    total, adv, _, pred = generator_loss(G, D, obs, fut, mode, z, l2_weight=0.0)
    assert total.item() == adv.item()
    assert adv.item() == generator_adv_loss(D, torch.cat([obs, pred], 1)).item()


def test_features_match_forward_and_are_deterministic():
    D = init_params(DiscriminatorConfig(), 0)
    full = np.random.default_rng(0).normal(size=(5, 20, 2))
    f = extract_features(D, full)
    assert np.allclose(f, D(torch.as_tensor(full, dtype=torch.float32))[0].detach().double().numpy())
    assert np.array_equal(f, extract_features(D, full))
    assert extract_features(D, np.zeros((0, 20, 2))).shape == (0, 64)


def _bench(n_each=17):
    spec = BenchmarkSpec(counts={"straight": n_each, "arc-left": n_each, "u-turn": 50 - 2 * n_each})
    return generate_benchmark(spec)[0]


def test_smoke_and_determinism():
    ws = _bench()
    cfg = SelfCondConfig(epochs=2, k=3, batch_size=16, seed=3)
    a = train_selfcond(ws, cfg)
    b = train_selfcond(ws, cfg)
    assert np.all(a.clustering.counts() > 0)
    assert a.clustering.counts().sum() == len(ws)
    assert np.array_equal(a.clustering.labels, b.clustering.labels)
    assert [s.g_loss for s in a.log.steps] == [s.g_loss for s in b.log.steps]
    assert len(a.log.steps) == 2 * 4
    assert all(np.isfinite(s.d_loss) and np.isfinite(s.g_loss) for s in a.log.steps)


def test_intra_cluster_metrics_contracts():
    ws = _bench()
    res = train_selfcond(ws, SelfCondConfig(epochs=1, k=3, batch_size=16))

    class Perfect:
        def predict_windows(self, windows, z_seed=0):
            return np.stack([w.fut for w in windows])

    stats = intra_cluster_metrics(res.G, res.clustering, ws, predictor=Perfect())
    assert all(s.ade == 0.0 and s.fde == 0.0 for s in stats if s.count)
    assert sum(s.count for s in stats) == len(ws)


def test_single_cluster_matches_overall():
    from modeforge.evaluation import per_window_errors
    from modeforge.predictors import GANPredictor

    ws = _bench()
    res = train_selfcond(ws, SelfCondConfig(epochs=1, k=1, batch_size=16))
    (s,) = intra_cluster_metrics(res.G, res.clustering, ws)
    pred = GANPredictor(res.G, condition=lambda w: res.clustering.one_hot()).predict_windows(ws)
    a, f = per_window_errors(ws, pred)
    assert s.ade == pytest.approx(a.mean(), abs=1e-12) and s.fde == pytest.approx(f.mean(), abs=1e-12)


def test_recluster_until_freezes_assignments():
    ws = _bench()
    res = train_selfcond(ws, SelfCondConfig(epochs=6, k=3, batch_size=16, recluster_every=1, recluster_until=2))
    assert [r["epoch"] for r in res.rounds] == [0, 1, 2]
