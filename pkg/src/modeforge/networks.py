"""Generator, discriminator and deterministic baseline.

All models take batch-first tensors of displacements, shape ``(B, steps, 2)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn


class ConfigError(ValueError):
    """Invalid model configuration or input shape."""


def _fingerprint(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GeneratorConfig:
    obs_len: int = 8
    pred_len: int = 12
    hidden_dim: int = 32
    latent_dim: int = 8
    mode_conditioned: bool = False
    k: int = 0
    cell: str = "lstm"

    def __post_init__(self):
        if min(self.obs_len, self.pred_len, self.hidden_dim, self.latent_dim) < 1:
            raise ConfigError("generator dimensions must be >= 1")
        if self.mode_conditioned and self.k < 1:
            raise ConfigError("a mode-conditioned generator needs k >= 1")
        if self.cell not in ("lstm", "gru"):
            raise ConfigError(f"unknown recurrent cell {self.cell!r}")

    @property
    def input_dim(self) -> int:
        return 2 + (self.k if self.mode_conditioned else 0)


@dataclass(frozen=True)
class DiscriminatorConfig:
    obs_len: int = 8
    pred_len: int = 12
    encoder_kind: str = "mlp"
    hidden_dim: int = 64
    feature_dim: int = 64
    condition_discriminator: bool = False
    k: int = 0

    def __post_init__(self):
        if self.encoder_kind not in ("mlp", "recurrent"):
            raise ConfigError(f"unknown encoder kind {self.encoder_kind!r}")
        if min(self.hidden_dim, self.feature_dim) < 1:
            raise ConfigError("discriminator dimensions must be >= 1")
        if self.k and self.feature_dim < self.k:
            raise ConfigError(f"feature_dim {self.feature_dim} is smaller than k={self.k}")
        if self.condition_discriminator and self.k < 1:
            raise ConfigError("condition_discriminator requires k >= 1")

    @property
    def seq_len(self) -> int:
        return self.obs_len + self.pred_len


@dataclass(frozen=True)
class BaselineConfig:
    obs_len: int = 8
    pred_len: int = 12
    hidden_dim: int = 32
    mlp_dim: int = 64
    cell: str = "lstm"

    def __post_init__(self):
        if min(self.obs_len, self.pred_len, self.hidden_dim, self.mlp_dim) < 1:
            raise ConfigError("baseline dimensions must be >= 1")


AnyConfig = Union[GeneratorConfig, DiscriminatorConfig, BaselineConfig]
_KINDS = {"generator": GeneratorConfig, "discriminator": DiscriminatorConfig, "baseline": BaselineConfig}


def config_kind(config: AnyConfig) -> str:
    for name, cls in _KINDS.items():
        if isinstance(config, cls):
            return name
    raise ConfigError(f"not a model config: {config!r}")


def config_fingerprint(config: AnyConfig) -> str:
    return _fingerprint({"kind": config_kind(config), **asdict(config)})


def _rnn(cell: str, input_dim: int, hidden_dim: int) -> nn.RNNBase:
    cls = nn.LSTM if cell == "lstm" else nn.GRU
    return cls(input_dim, hidden_dim, batch_first=True)


def _check_seq(x: torch.Tensor, steps: int, what: str) -> None:
    if x.dim() != 3 or x.shape[1] != steps or x.shape[2] != 2:
        raise ConfigError(f"{what} must have shape (B, {steps}, 2), got {tuple(x.shape)}")


class Generator(nn.Module):
    """Recurrent encoder over X (optionally with the one-hot mode appended to
    every step), latent concat at the bottleneck, recurrent decoder unrolled
    ``pred_len`` steps with a linear 2D head."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.encoder = _rnn(config.cell, config.input_dim, config.hidden_dim)
        self.decoder = _rnn(config.cell, config.hidden_dim + config.latent_dim, config.hidden_dim)
        self.head = nn.Linear(config.hidden_dim, 2)

    def forward(self, obs: torch.Tensor, mode: Optional[torch.Tensor], z: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        _check_seq(obs, cfg.obs_len, "obs")
        batch = obs.shape[0]
        if cfg.mode_conditioned:
            if mode is None or mode.shape != (batch, cfg.k):
                raise ConfigError(f"mode must have shape ({batch}, {cfg.k})")
            x = torch.cat([obs, mode.unsqueeze(1).expand(-1, cfg.obs_len, -1)], dim=2)
        else:
            if mode is not None:
                raise ConfigError("unconditioned generator received a mode")
            x = obs
        if z.shape != (batch, cfg.latent_dim):
            raise ConfigError(f"z must have shape ({batch}, {cfg.latent_dim}), got {tuple(z.shape)}")
        _, state = self.encoder(x)
        enc_h = state[0][-1] if isinstance(state, tuple) else state[-1]
        ctx = torch.cat([enc_h, z], dim=1).unsqueeze(1).expand(-1, cfg.pred_len, -1)
        out, _ = self.decoder(ctx, state)
        return self.head(out)


class Discriminator(nn.Module):
    """Encoder producing the clustering features, plus a linear realness classifier."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        if config.encoder_kind == "mlp":
            self.encoder = nn.Sequential(
                nn.Linear(config.seq_len * 2, config.hidden_dim),
                nn.LeakyReLU(0.2),
                nn.Linear(config.hidden_dim, config.feature_dim),
                nn.LeakyReLU(0.2),
            )
        else:
            self.rnn = nn.LSTM(2, config.hidden_dim, batch_first=True)
            self.encoder = nn.Sequential(nn.Linear(config.hidden_dim, config.feature_dim), nn.LeakyReLU(0.2))
        extra = config.k if config.condition_discriminator else 0
        self.classifier = nn.Linear(config.feature_dim + extra, 1)

    def features(self, full: torch.Tensor) -> torch.Tensor:
        _check_seq(full, self.config.seq_len, "full track")
        if self.config.encoder_kind == "mlp":
            return self.encoder(full.reshape(full.shape[0], -1))
        _, (h, _) = self.rnn(full)
        return self.encoder(h[-1])

    def logits(self, full: torch.Tensor, mode: Optional[torch.Tensor] = None):
        feats = self.features(full)
        inp = feats
        if self.config.condition_discriminator:
            if mode is None:
                raise ConfigError("conditioned discriminator requires a mode")
            inp = torch.cat([feats, mode], dim=1)
        return feats, self.classifier(inp).squeeze(1)

    def forward(self, full: torch.Tensor, mode: Optional[torch.Tensor] = None):
        feats, logit = self.logits(full, mode)
        return feats, torch.sigmoid(logit)


class Baseline(nn.Module):
    """Deterministic forecaster: recurrent encoder followed by an MLP head."""

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        self.encoder = _rnn(config.cell, 2, config.hidden_dim)
        self.mlp = nn.Sequential(
            nn.Linear(config.hidden_dim, config.mlp_dim),
            nn.ReLU(),
            nn.Linear(config.mlp_dim, config.pred_len * 2),
        )

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        _check_seq(obs, self.config.obs_len, "obs")
        _, state = self.encoder(obs)
        h = state[0][-1] if isinstance(state, tuple) else state[-1]
        return self.mlp(h).view(obs.shape[0], self.config.pred_len, 2)


_MODULES = {GeneratorConfig: Generator, DiscriminatorConfig: Discriminator, BaselineConfig: Baseline}


def _init_module(module: nn.Module, gen: torch.Generator) -> None:
    # uniform fan-in for dense weights/biases; orthogonal recurrent kernels per gate block
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            bound = 1.0 / math.sqrt(sub.in_features)
            with torch.no_grad():
                sub.weight.uniform_(-bound, bound, generator=gen)
                sub.bias.uniform_(-bound, bound, generator=gen)
        elif isinstance(sub, (nn.LSTM, nn.GRU)):
            hidden = sub.hidden_size
            gates = 4 if isinstance(sub, nn.LSTM) else 3
            for name, p in sub.named_parameters():
                with torch.no_grad():
                    if name.startswith("weight_hh"):
                        for g in range(gates):
                            block = torch.empty(hidden, hidden)
                            nn.init.orthogonal_(block, generator=gen)
                            p[g * hidden : (g + 1) * hidden].copy_(block)
                    elif name.startswith("weight_ih"):
                        bound = 1.0 / math.sqrt(p.shape[1])
                        p.uniform_(-bound, bound, generator=gen)
                    else:
                        p.zero_()
                        if isinstance(sub, nn.LSTM) and name.startswith("bias_ih"):
                            p[hidden : 2 * hidden] = 1.0  # forget gate


def init_params(config: AnyConfig, seed: int) -> nn.Module:
    """Build the model for ``config`` with parameters drawn reproducibly from ``seed``."""
    module = _MODULES[type(config)](config)
    gen = torch.Generator().manual_seed(int(seed))
    _init_module(module, gen)
    module.init_seed = int(seed)
    return module


def generator_forward(model: Generator, obs, mode, z) -> torch.Tensor:
    return model(obs, mode, z)


def discriminator_forward(model: Discriminator, full, mode=None):
    """Return ``(features, score)`` with ``score`` in (0, 1)."""
    return model(full, mode)


def baseline_forward(model: Baseline, obs) -> torch.Tensor:
    return model(obs)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- checkpoints -------------------------------------------------------------


@dataclass
class ModelParams:
    """Serializable parameter set: config, init seed, named arrays, step counter."""

    config: AnyConfig
    seed: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def from_module(cls, module: nn.Module, step: int = 0) -> "ModelParams":
        arrays = {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}
        return cls(module.config, getattr(module, "init_seed", -1), arrays, step)

    def to_module(self) -> nn.Module:
        module = _MODULES[type(self.config)](self.config)
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.arrays.items()}
        dtype = next(iter(state.values())).dtype if state else torch.float32
        module.to(dtype)
        module.load_state_dict(state)
        module.init_seed = self.seed
        return module

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": config_kind(self.config),
            "config": asdict(self.config),
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "step": self.step,
            "names": list(self.arrays),
        }
        payload = {f"p{i}": arr for i, arr in enumerate(self.arrays.values())}
        with path.open("wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **payload)

    @classmethod
    def load(cls, path, expect: Optional[AnyConfig] = None) -> "ModelParams":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(data["__meta__"].tobytes().decode())
            arrays = {name: data[f"p{i}"] for i, name in enumerate(meta["names"])}
        config = _KINDS[meta["kind"]](**meta["config"])
        if config_fingerprint(config) != meta["fingerprint"]:
            raise ConfigError(f"{path}: checkpoint fingerprint does not match its config")
        if expect is not None and config_fingerprint(expect) != meta["fingerprint"]:
            raise ConfigError(f"{path}: checkpoint was written for a different config")
        return cls(config, meta["seed"], arrays, meta["step"])


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return (
        a.fingerprint == b.fingerprint
        and a.arrays.keys() == b.arrays.keys()
        and all(a.arrays[k].dtype == b.arrays[k].dtype and np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    )


def config_from_dict(kind: str, d: dict) -> AnyConfig:
    return _KINDS[kind](**d)
