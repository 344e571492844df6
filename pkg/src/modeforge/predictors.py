"""Uniform ``predict_windows`` wrappers around trained models."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .core import TrackWindow, stack_windows
from .networks import Baseline, Generator


def latent_draws(n: int, latent_dim: int, z_seed: int, num_samples: int = 1) -> torch.Tensor:
    """``(num_samples, n, latent_dim)`` standard normal draws, fixed by ``z_seed``."""
    gen = torch.Generator().manual_seed(int(z_seed))
    return torch.randn(num_samples, n, latent_dim, generator=gen)


class BaselinePredictor:
    generative = False

    def __init__(self, model: Baseline, name: str = "lstm"):
        self.model = model
        self.name = name

    @torch.no_grad()
    def predict(self, obs: np.ndarray, z=None) -> np.ndarray:
        dtype = next(self.model.parameters()).dtype
        out = self.model(torch.as_tensor(obs, dtype=dtype))
        return out.double().numpy()

    def predict_windows(self, windows: Sequence[TrackWindow], z_seed: int = 0) -> np.ndarray:
        _, obs, _ = stack_windows(windows)
        return self.predict(obs)


class GANPredictor:
    """Generator wrapper; ``condition`` maps windows to one-hot rows when the
    generator is conditioned (ideal cGAN / ideal self-conditioned evaluation)."""

    generative = True

    def __init__(
        self,
        G: Generator,
        name: str = "vanilla",
        condition: Optional[Callable[[Sequence[TrackWindow]], np.ndarray]] = None,
        num_samples: int = 1,
    ):
        self.G = G
        self.name = name
        self.condition = condition
        self.num_samples = num_samples

    @torch.no_grad()
    def predict(self, obs: np.ndarray, z: torch.Tensor, mode: Optional[np.ndarray] = None) -> np.ndarray:
        dtype = next(self.G.parameters()).dtype
        m = None if mode is None else torch.as_tensor(mode, dtype=dtype)
        return self.G(torch.as_tensor(obs, dtype=dtype), m, z.to(dtype)).double().numpy()

    def predict_windows(self, windows: Sequence[TrackWindow], z_seed: int = 0, mode=None) -> np.ndarray:
        _, obs, fut = stack_windows(windows)
        if mode is None and self.condition is not None:
            mode = self.condition(windows)
        if mode is None and self.G.config.mode_conditioned:
            raise ValueError("a conditioned generator needs a mode per window or a condition function")
        z = latent_draws(len(windows), self.G.config.latent_dim, z_seed, self.num_samples)
        if self.num_samples == 1:
            return self.predict(obs, z[0], mode)
        # best-of-N against the ground truth (off by default)
        cands = np.stack([self.predict(obs, z[s], mode) for s in range(self.num_samples)])
        pos = np.cumsum(cands, axis=2)
        err = np.linalg.norm(pos - np.cumsum(fut, axis=1)[None], axis=3).mean(axis=2)
        best = err.argmin(axis=0)
        return cands[best, np.arange(len(windows))]
