"""Training for every compared forecaster: LSTM baseline, vanilla GAN with the
weighted settings, and the two oracle-conditioned models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .adversarial import GANConfig, NumericalError, StepLosses, TrainLog, to_tensor, train_gan_loop
from .clustering import ClusteringState
from .core import LabelRegistry, TrackWindow, one_hot_matrix, stack_windows
from .evaluation import per_window_errors
from .networks import Baseline, ConfigError, Discriminator, Generator, init_params
from .predictors import BaselinePredictor, GANPredictor, latent_draws
from .selfcond import cluster_condition, extract_features
from .weights import WeightedBatchSampler, WeightTable, normalized_sample_weights, weighted_l2_loss

GAN_SETTINGS = ("none", "wl2", "wb", "wl2wb")
FORECASTERS = ("lstm", "vanilla", "wl2", "wb", "wl2wb", "cgan-ideal", "selfcond-ideal")


def _setting_flags(setting: str) -> tuple[bool, bool]:
    key = setting.lower().replace("+", "").replace("-", "")
    aliases = {"none": "none", "vanilla": "none", "wl2": "wl2", "wb": "wb", "wl2wb": "wl2wb"}
    if key not in aliases:
        raise ConfigError(f"unknown training setting {setting!r}; expected one of {GAN_SETTINGS}")
    key = aliases[key]
    return key in ("wl2", "wl2wb"), key in ("wb", "wl2wb")


@dataclass
class GANRun:
    G: Generator
    D: Discriminator
    log: TrainLog
    registry: Optional[LabelRegistry] = None


def train_baseline(windows: Sequence[TrackWindow], cfg: GANConfig, max_steps: Optional[int] = None):
    """LSTM encoder + MLP head trained on plain L2 with a uniform loader.

    Returns ``(model, log)``; deterministic given ``cfg.seed``.
    """
    if len(windows) == 0:
        raise ValueError("cannot train on an empty dataset")
    _, obs_np, fut_np = stack_windows(windows)
    obs, fut = to_tensor(obs_np), to_tensor(fut_np)
    model: Baseline = init_params(cfg.baseline_config(obs.shape[1], fut.shape[1]), cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_g)
    sampler = WeightedBatchSampler(np.zeros(len(windows)), None, cfg.batch_size, cfg.seed)
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        first = len(log.steps)
        for idx in sampler:
            idx_t = torch.as_tensor(idx)
            loss = weighted_l2_loss(model(obs[idx_t]), fut[idx_t])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite baseline loss at step {step} (epoch {epoch}): {value}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            log.steps.append(StepLosses(step, 0.0, value, 0.0, value, 0.0, 0.0))
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        chunk = log.steps[first:]
        if chunk:
            log.epochs.append({"epoch": epoch, "g_l2": float(np.mean([s.g_l2 for s in chunk]))})
        if max_steps is not None and step >= max_steps:
            break
    return model, log


def train_vanilla_gan(
    windows: Sequence[TrackWindow],
    cfg: GANConfig,
    setting: str = "none",
    table: Optional[WeightTable] = None,
    cluster_ids: Optional[Sequence[int]] = None,
    cluster_first: bool = False,
    max_steps: Optional[int] = None,
) -> GANRun:
    """Unconditioned GAN; the weighted settings change only the loss and/or loader.

    ``wl2`` multiplies each sample's reconstruction error by its cluster
    Lambda (mean 1 over the training set); ``wb`` draws batches with
    probability proportional to Lambda; ``wl2wb`` does both.
    """
    use_wl2, use_wb = _setting_flags(setting)
    if (use_wl2 or use_wb) and (table is None or cluster_ids is None):
        raise ConfigError(f"setting {setting!r} needs a weight table and cluster assignments")
    if cluster_ids is not None and len(cluster_ids) != len(windows):
        raise ConfigError(f"{len(cluster_ids)} cluster ids for {len(windows)} windows")
    _, obs_np, fut_np = stack_windows(windows)
    obs, fut = to_tensor(obs_np), to_tensor(fut_np)
    t, h = obs.shape[1], fut.shape[1]

    G = init_params(cfg.generator_config(t, h), cfg.seed)
    D = init_params(cfg.discriminator_config(t, h), cfg.seed + 1)
    zgen = torch.Generator().manual_seed(cfg.seed + 2)
    ids = np.zeros(len(windows)) if cluster_ids is None else np.asarray(cluster_ids)
    sampler = WeightedBatchSampler(ids, table if use_wb else None, cfg.batch_size, cfg.seed, cluster_first)
    sample_weights = to_tensor(normalized_sample_weights(table, ids)) if use_wl2 else None
    log = train_gan_loop(G, D, obs, fut, cfg, sampler, zgen, sample_weights=sample_weights, max_steps=max_steps)
    return GANRun(G, D, log)


def label_condition(registry: LabelRegistry):
    """Condition function mapping each window's supervised label to a one-hot row."""

    def condition(windows):
        ids = []
        for w in windows:
            try:
                ids.append(registry.index(w.label))
            except KeyError:
                raise ValueError(f"label {w.label!r} unseen in training; known: {list(registry.labels)}") from None
        return one_hot_matrix(ids, len(registry.labels))

    return condition


def train_ideal_cgan(
    windows: Sequence[TrackWindow],
    cfg: GANConfig,
    registry: Optional[LabelRegistry] = None,
    max_steps: Optional[int] = None,
) -> GANRun:
    """Generator conditioned on the one-hot supervised label of each window."""
    registry = registry or LabelRegistry.from_windows(windows)
    modes = to_tensor(label_condition(registry)(windows))
    _, obs_np, fut_np = stack_windows(windows)
    obs, fut = to_tensor(obs_np), to_tensor(fut_np)
    t, h = obs.shape[1], fut.shape[1]
    G = init_params(cfg.generator_config(t, h, len(registry.labels)), cfg.seed)
    D = init_params(cfg.discriminator_config(t, h), cfg.seed + 1)
    zgen = torch.Generator().manual_seed(cfg.seed + 2)
    sampler = WeightedBatchSampler(np.zeros(len(windows)), None, cfg.batch_size, cfg.seed)
    log = train_gan_loop(G, D, obs, fut, cfg, sampler, zgen, modes=modes, max_steps=max_steps)
    return GANRun(G, D, log, registry)


def ideal_cgan_predictor(G: Generator, registry: LabelRegistry) -> GANPredictor:
    return GANPredictor(G, "cgan-ideal", condition=label_condition(registry))


def ideal_selfcond_predictor(G: Generator, D: Discriminator, state: ClusteringState) -> GANPredictor:
    """Self-conditioned generator fed the true cluster of each test window's full track."""
    return GANPredictor(G, "selfcond-ideal", condition=cluster_condition(D, state))


def wrong_mode_probe(
    G: Generator,
    D: Discriminator,
    state: ClusteringState,
    windows: Sequence[TrackWindow],
    z_seed: int = 0,
    seed: int = 0,
    metric_mode: str = "mean",
) -> dict:
    """Compare true-cluster conditioning with a uniformly drawn wrong cluster.

    Both predictions share the same latent draw per window. Returns the
    fraction of windows where the true mode is at least as accurate.
    """
    if state.k < 2:
        raise ValueError("a wrong mode needs k >= 2")
    true_ids = state.assign(extract_features(D, windows))
    rng = np.random.default_rng(seed)
    wrong = (true_ids + rng.integers(1, state.k, size=len(true_ids))) % state.k
    pred = GANPredictor(G, "selfcond")
    _, obs, _ = stack_windows(windows)
    z = latent_draws(len(windows), G.config.latent_dim, z_seed)[0]
    a_true, _ = per_window_errors(windows, pred.predict(obs, z, one_hot_matrix(true_ids, state.k)), metric_mode)
    a_wrong, _ = per_window_errors(windows, pred.predict(obs, z, one_hot_matrix(wrong, state.k)), metric_mode)
    return {
        "true_ids": true_ids,
        "wrong_ids": wrong,
        "ade_true": a_true,
        "ade_wrong": a_wrong,
        "win_rate": float(np.mean(a_true <= a_wrong)),
    }


def baseline_predictor(model: Baseline) -> BaselinePredictor:
    return BaselinePredictor(model, "lstm")
