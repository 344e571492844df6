"""Self-conditioned GAN: the generator is conditioned on clusters of the
discriminator's features of real full tracks, re-clustered every few epochs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .adversarial import GANConfig, TrainLog, to_tensor, train_gan_loop
from .clustering import ClusteringState, cluster_features, recluster_and_match, refresh_centroids
from .core import TrackWindow, full_tracks, one_hot_matrix, stack_windows
from .evaluation import per_window_errors
from .networks import Discriminator, Generator, init_params
from .predictors import GANPredictor
from .weights import ClusterStats, WeightedBatchSampler


@dataclass
class SelfCondConfig(GANConfig):
    k: int = 5
    recluster_every: int = 5
    recluster_until: Optional[int] = None  # last epoch that may recluster; None = no limit
    condition_discriminator: bool = False
    standardize_features: bool = True

    def __post_init__(self):
        if self.recluster_every < 1:
            raise ValueError("recluster_every must be >= 1")
        if self.recluster_until is not None and self.recluster_until < 0:
            raise ValueError("recluster_until must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SelfCondConfig":
        return cls(**d)


@dataclass
class SelfCondResult:
    G: Generator
    D: Discriminator
    clustering: ClusteringState
    log: TrainLog
    rounds: list[dict] = field(default_factory=list)


@torch.no_grad()
def extract_features(D: Discriminator, windows) -> np.ndarray:
    """Discriminator-encoder features of real full tracks, one row per window.

    Accepts a list of windows or an ``(n, t+h, 2)`` array of full tracks.
    """
    full = windows if isinstance(windows, (np.ndarray, torch.Tensor)) else full_tracks(windows)
    if len(full) == 0:
        return np.zeros((0, D.config.feature_dim))
    dtype = next(D.parameters()).dtype
    return D.features(torch.as_tensor(full, dtype=dtype)).double().numpy()


def train_selfcond(windows: Sequence[TrackWindow], cfg: SelfCondConfig, max_steps: Optional[int] = None) -> SelfCondResult:
    if len(windows) < cfg.k:
        raise ValueError(f"need at least k={cfg.k} windows, got {len(windows)}")
    _, obs_np, fut_np = stack_windows(windows)
    t, h = obs_np.shape[1], fut_np.shape[1]
    obs, fut = to_tensor(obs_np), to_tensor(fut_np)
    full = torch.cat([obs, fut], dim=1)

    G = init_params(cfg.generator_config(t, h, cfg.k), cfg.seed)
    D = init_params(cfg.discriminator_config(t, h, cfg.k, cfg.condition_discriminator), cfg.seed + 1)
    zgen = torch.Generator().manual_seed(cfg.seed + 2)
    sampler = WeightedBatchSampler(np.zeros(len(windows)), None, cfg.batch_size, cfg.seed)

    state = cluster_features(extract_features(D, full), cfg.k, cfg.seed, standardize=cfg.standardize_features)
    rounds = [{"epoch": 0, "round": state.round, "counts": state.counts().tolist()}]

    def on_epoch(epoch, modes):
        nonlocal state
        frozen = cfg.recluster_until is not None and epoch > cfg.recluster_until
        if modes is not None and (epoch % cfg.recluster_every != 0 or frozen):
            return modes
        if modes is not None:
            state = recluster_and_match(state, extract_features(D, full))
            rounds.append({"epoch": epoch, "round": state.round, "counts": state.counts().tolist()})
        return to_tensor(state.one_hot())

    log = train_gan_loop(
        G, D, obs, fut, cfg, sampler, zgen, on_epoch=on_epoch,
        condition_discriminator=cfg.condition_discriminator, max_steps=max_steps,
    )
    # keep the labels the generator was last trained with; only move the
    # centroids into the final discriminator's feature space
    state = refresh_centroids(state, extract_features(D, full))
    return SelfCondResult(G, D, state, log, rounds)


def cluster_condition(D: Discriminator, state: ClusteringState):
    """Condition function: nearest-centroid cluster of each window's real full track."""

    def condition(windows):
        return one_hot_matrix(state.assign(extract_features(D, windows)), state.k)

    return condition


def intra_cluster_metrics(
    G: Generator,
    state: ClusteringState,
    windows: Sequence[TrackWindow],
    z_seed: int = 0,
    metric_mode: str = "mean",
    predictor=None,
) -> list[ClusterStats]:
    """Per-cluster ADE/FDE of the conditioned generator (one latent draw per window).

    ``state.labels`` must hold one cluster id per window.
    """
    if state.n != len(windows):
        raise ValueError(f"clustering covers {state.n} samples, got {len(windows)} windows")
    if predictor is None:
        predictor = GANPredictor(G, "selfcond", condition=lambda ws: state.one_hot())
    pred = predictor.predict_windows(windows, z_seed=z_seed)
    a, f = per_window_errors(windows, pred, metric_mode)
    out = []
    for c in range(state.k):
        mask = state.labels == c
        n = int(mask.sum())
        if n == 0:
            out.append(ClusterStats(c, None, None, 0))
        else:
            out.append(ClusterStats(c, float(a[mask].mean()), float(f[mask].mean()), n))
    return out


def stats_to_json(stats: Sequence[ClusterStats]) -> list[dict]:
    return [asdict(s) for s in stats]


def stats_from_json(rows) -> list[ClusterStats]:
    return [ClusterStats(**r) for r in rows]
