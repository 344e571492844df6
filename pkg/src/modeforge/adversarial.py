"""Adversarial losses and the single training step shared by every GAN variant."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .networks import BaselineConfig, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .weights import weighted_l2_loss


class NumericalError(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass
class GANConfig:
    """Hyper-parameters shared by the self-conditioned GAN and vanilla forecasters."""

    epochs: int = 200
    batch_size: int = 64
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    l2_weight: float = 1.0
    seed: int = 0
    non_saturating: bool = True
    hidden_dim: int = 32
    latent_dim: int = 8
    cell: str = "lstm"
    d_encoder: str = "mlp"
    d_hidden_dim: int = 64
    feature_dim: int = 64

    def generator_config(self, obs_len: int, pred_len: int, k: int = 0) -> GeneratorConfig:
        return GeneratorConfig(
            obs_len, pred_len, self.hidden_dim, self.latent_dim, mode_conditioned=k > 0, k=k, cell=self.cell
        )

    def discriminator_config(self, obs_len: int, pred_len: int, k: int = 0, conditioned: bool = False):
        return DiscriminatorConfig(
            obs_len, pred_len, self.d_encoder, self.d_hidden_dim, self.feature_dim, conditioned, k
        )

    def baseline_config(self, obs_len: int, pred_len: int) -> BaselineConfig:
        return BaselineConfig(obs_len, pred_len, self.hidden_dim, self.d_hidden_dim, self.cell)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepLosses:
    step: int
    d_loss: float
    g_loss: float
    g_adv: float
    g_l2: float
    d_real: float
    d_fake: float


@dataclass
class TrainLog:
    steps: list[StepLosses] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def as_rows(self) -> list[dict]:
        return [asdict(s) for s in self.steps]


def discriminator_loss(D: Discriminator, real_full, fake_full, mode=None) -> torch.Tensor:
    """``-(log D(real) + log(1 - D(fake)))`` averaged over the batch."""
    _, real_logit = D.logits(real_full, mode)
    _, fake_logit = D.logits(fake_full, mode)
    return F.softplus(-real_logit).mean() + F.softplus(fake_logit).mean()


def generator_adv_loss(D: Discriminator, fake_full, mode=None, non_saturating: bool = True) -> torch.Tensor:
    """``-log D(fake)`` (non-saturating) or ``log(1 - D(fake))`` (minimax form)."""
    _, logit = D.logits(fake_full, mode)
    if non_saturating:
        return F.softplus(-logit).mean()
    return -F.softplus(logit).mean()


def generator_loss(
    G: Generator,
    D: Discriminator,
    obs,
    fut,
    mode,
    z,
    l2_weight: float = 1.0,
    sample_weights=None,
    non_saturating: bool = True,
    d_mode=None,
):
    """Return ``(total, adversarial, l2, prediction)`` for one batch."""
    pred = G(obs, mode, z)
    fake_full = torch.cat([obs, pred], dim=1)
    adv = generator_adv_loss(D, fake_full, d_mode, non_saturating)
    l2 = weighted_l2_loss(pred, fut, sample_weights)
    return adv + l2_weight * l2, adv, l2, pred


def adversarial_step(
    G: Generator,
    D: Discriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    obs: torch.Tensor,
    fut: torch.Tensor,
    z: torch.Tensor,
    mode: Optional[torch.Tensor] = None,
    l2_weight: float = 1.0,
    sample_weights=None,
    non_saturating: bool = True,
    condition_discriminator: bool = False,
    step: int = 0,
    update_d: bool = True,
) -> StepLosses:
    """One discriminator update followed by one generator update on the same batch and z."""
    d_mode = mode if condition_discriminator else None
    real_full = torch.cat([obs, fut], dim=1)

    with torch.no_grad():
        fake = G(obs, mode, z)
    fake_full = torch.cat([obs, fake], dim=1)
    _, real_logit = D.logits(real_full, d_mode)
    _, fake_logit = D.logits(fake_full, d_mode)
    d_loss = F.softplus(-real_logit).mean() + F.softplus(fake_logit).mean()
    d_real = torch.sigmoid(real_logit.detach()).mean()
    d_fake = torch.sigmoid(fake_logit.detach()).mean()
    if update_d:
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

    D.requires_grad_(False)
    try:
        g_total, adv, l2, _ = generator_loss(
            G, D, obs, fut, mode, z, l2_weight, sample_weights, non_saturating, d_mode
        )
        opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        opt_g.step()
    finally:
        D.requires_grad_(True)

    losses = StepLosses(
        step, d_loss.item(), g_total.item(), adv.item(), l2.item(), d_real.item(), d_fake.item()
    )
    if not all(math.isfinite(v) for v in (losses.d_loss, losses.g_loss)):
        raise NumericalError(
            f"non-finite loss at step {step}: d_loss={losses.d_loss}, g_loss={losses.g_loss} "
            f"(adv={losses.g_adv}, l2={losses.g_l2})"
        )
    return losses


def make_optimizers(G, D, cfg: GANConfig):
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_g)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_d)
    return opt_g, opt_d


def draw_latent(gen: torch.Generator, n: int, latent_dim: int, dtype=torch.float32) -> torch.Tensor:
    return torch.randn(n, latent_dim, generator=gen, dtype=dtype)


def to_tensor(a: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


def train_gan_loop(
    G: Generator,
    D: Discriminator,
    obs: torch.Tensor,
    fut: torch.Tensor,
    cfg: GANConfig,
    sampler,
    zgen: torch.Generator,
    modes: Optional[torch.Tensor] = None,
    sample_weights: Optional[torch.Tensor] = None,
    on_epoch=None,
    condition_discriminator: bool = False,
    max_steps: Optional[int] = None,
    log: Optional[TrainLog] = None,
) -> TrainLog:
    """Run ``cfg.epochs`` epochs of :func:`adversarial_step`.

    ``on_epoch(epoch, modes)`` may return refreshed per-sample modes before
    each epoch (used for periodic reclustering).
    """
    log = log if log is not None else TrainLog()
    opt_g, opt_d = make_optimizers(G, D, cfg)
    step = 0
    for epoch in range(cfg.epochs):
        if on_epoch is not None:
            modes = on_epoch(epoch, modes)
        first = len(log.steps)
        for idx in sampler:
            idx_t = torch.as_tensor(idx)
            z = draw_latent(zgen, len(idx), G.config.latent_dim, obs.dtype)
            log.steps.append(
                adversarial_step(
                    G,
                    D,
                    opt_g,
                    opt_d,
                    obs[idx_t],
                    fut[idx_t],
                    z,
                    None if modes is None else modes[idx_t],
                    cfg.l2_weight,
                    None if sample_weights is None else sample_weights[idx_t],
                    cfg.non_saturating,
                    condition_discriminator,
                    step,
                )
            )
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        chunk = log.steps[first:]
        if chunk:
            log.epochs.append(
                {
                    "epoch": epoch,
                    "d_loss": float(np.mean([s.d_loss for s in chunk])),
                    "g_loss": float(np.mean([s.g_loss for s in chunk])),
                    "g_l2": float(np.mean([s.g_l2 for s in chunk])),
                }
            )
        if max_steps is not None and step >= max_steps:
            break
    return log
