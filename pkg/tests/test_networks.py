import numpy as np
import pytest
import torch

from modeforge.networks import (
    BaselineConfig,
    ConfigError,
    DiscriminatorConfig,
    GeneratorConfig,
    ModelParams,
    count_params,
    init_params,
    params_equal,
)


def _obs(b=4, t=8, seed=0):
    return torch.randn(b, t, 2, generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_generator_shapes(cell):
    G = init_params(GeneratorConfig(cell=cell, mode_conditioned=True, k=3), 0)
    out = G(_obs(), torch.eye(3)[[0, 1, 2, 0]], torch.randn(4, 8))
    assert out.shape == (4, 12, 2)


@pytest.mark.parametrize("kind", ["mlp", "recurrent"])
def test_discriminator_shapes(kind):
    D = init_params(DiscriminatorConfig(encoder_kind=kind), 0)
    feats, score = D(torch.randn(5, 20, 2))
    assert feats.shape == (5, 64) and score.shape[0] == 5
    assert torch.all((score > 0) & (score < 1))


def test_baseline_shapes():
    assert init_params(BaselineConfig(), 0)(_obs()).shape == (4, 12, 2)


def test_wrong_shape_rejected():
    G = init_params(GeneratorConfig(), 0)
    with pytest.raises(ConfigError):
        G(torch.zeros(2, 7, 2), None, torch.zeros(2, 8))


@pytest.mark.parametrize(
    "bad",
    [
        lambda: GeneratorConfig(mode_conditioned=True, k=0),
        lambda: GeneratorConfig(cell="rnn"),
        lambda: DiscriminatorConfig(encoder_kind="cnn"),
        lambda: DiscriminatorConfig(feature_dim=4, k=5),
        lambda: BaselineConfig(hidden_dim=0),
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        bad()


def test_init_is_deterministic_and_seed_dependent():
    cfg = GeneratorConfig()
    a = ModelParams.from_module(init_params(cfg, 3))
    b = ModelParams.from_module(init_params(cfg, 3))
    c = ModelParams.from_module(init_params(cfg, 4))
    assert params_equal(a, b) and not params_equal(a, c)


def test_lstm_forget_bias_and_orthogonal_recurrence():
    G = init_params(GeneratorConfig(hidden_dim=16), 0)
    h = 16
    assert torch.all(G.encoder.bias_ih_l0[h : 2 * h] == 1.0)
    block = G.encoder.weight_hh_l0[:h].detach()
    assert torch.allclose(block @ block.T, torch.eye(h), atol=1e-5)


def test_save_load_bit_exact(tmp_path):
    cfg = DiscriminatorConfig()
    p = ModelParams.from_module(init_params(cfg, 7), step=11)
    p.save(tmp_path / "d.npz")
    q = ModelParams.load(tmp_path / "d.npz", expect=cfg)
    assert params_equal(p, q) and q.step == 11 and q.seed == 7
    full = torch.randn(3, 20, 2)
    assert torch.equal(p.to_module()(full)[0], q.to_module()(full)[0])


def test_load_with_other_config_rejected(tmp_path):
    ModelParams.from_module(init_params(BaselineConfig(), 0)).save(tmp_path / "b.npz")
    with pytest.raises(ConfigError):
        ModelParams.load(tmp_path / "b.npz", expect=BaselineConfig(hidden_dim=8))


def test_mode_conditioning_changes_output():
    G = init_params(GeneratorConfig(mode_conditioned=True, k=2), 0)
    obs, z = _obs(2), torch.randn(2, 8)
    a = G(obs, torch.eye(2)[[0, 0]], z)
    b = G(obs, torch.eye(2)[[1, 1]], z)
    assert not torch.allclose(a, b)


def test_latent_changes_output():
    G = init_params(GeneratorConfig(), 0)
    obs = _obs(2)
    assert not torch.allclose(G(obs, None, torch.zeros(2, 8)), G(obs, None, torch.ones(2, 8)))


def _fd_check(module, loss_fn, n_checks=20, eps=1e-6, seed=0):
    module = module.double()
    params = [p for p in module.parameters()]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    rng = np.random.default_rng(seed)
    for _ in range(n_checks):
        i = int(rng.integers(len(params)))
        flat = params[i].data.view(-1)
        j = int(rng.integers(flat.numel()))
        old = flat[j].item()
        with torch.no_grad():
            flat[j] = old + eps
            up = loss_fn().item()
            flat[j] = old - eps
            down = loss_fn().item()
            flat[j] = old
        fd = (up - down) / (2 * eps)
        an = grads[i].view(-1)[j].item()
        assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd), abs(an))


def test_baseline_gradient_matches_finite_differences():
    m = init_params(BaselineConfig(obs_len=3, pred_len=2, hidden_dim=4, mlp_dim=4), 0)
    assert count_params(m) <= 1000
    obs = torch.randn(3, 3, 2, dtype=torch.float64)
    fut = torch.randn(3, 2, 2, dtype=torch.float64)
    _fd_check(m, lambda: ((m.double()(obs) - fut) ** 2).sum(-1).sum(-1).mean())
