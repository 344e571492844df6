"""Cluster weights and the two ways they enter forecaster training.

Per-cluster weight::

    Lambda_i = l_ade * ADE_i / ADE_max + l_fde * FDE_i / FDE_max + l_d * n_i / n_total

with maxima taken over non-empty clusters.  Empty clusters get zero weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch


class DegenerateWeightsError(ValueError):
    """The weights cannot be normalized into a distribution."""


@dataclass(frozen=True)
class ClusterStats:
    cluster_id: int
    ade: Optional[float]
    fde: Optional[float]
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        for v in (self.ade, self.fde):
            if v is not None and (v < 0 or not math.isfinite(v)):
                raise ValueError(f"cluster {self.cluster_id}: metrics must be finite and >= 0")
        if self.count > 0 and (self.ade is None or self.fde is None):
            raise ValueError(f"cluster {self.cluster_id}: non-empty cluster without metrics")


@dataclass(frozen=True)
class WeightTable:
    lambda_ade: float
    lambda_fde: float
    lambda_d: float
    weights: tuple  # Lambda_i per cluster id
    probs: tuple  # Lambda_i / sum(Lambda)
    terms: tuple = ()  # (ade_term, fde_term, count_term) per cluster

    @property
    def k(self) -> int:
        return len(self.weights)

    def sample_weights(self, cluster_ids: Sequence[int]) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)[np.asarray(cluster_ids, dtype=np.int64)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WeightTable":
        return cls(
            d["lambda_ade"],
            d["lambda_fde"],
            d["lambda_d"],
            tuple(d["weights"]),
            tuple(d["probs"]),
            tuple(tuple(t) for t in d.get("terms", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "WeightTable":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def uniform(cls, k: int) -> "WeightTable":
        return cls(0.0, 0.0, 0.0, (1.0,) * k, (1.0 / k,) * k, ((0.0, 0.0, 0.0),) * k)

    def format(self) -> str:
        lines = [
            f"lambda_ade={self.lambda_ade:g}  lambda_fde={self.lambda_fde:g}  lambda_d={self.lambda_d:g}",
            f"{'cluster':>7} {'ade term':>9} {'fde term':>9} {'count term':>10} {'Lambda':>9} {'p':>7}",
        ]
        terms = self.terms or ((math.nan,) * 3,) * self.k
        for i, (w, p, (ta, tf, td)) in enumerate(zip(self.weights, self.probs, terms)):
            lines.append(f"{i:>7} {ta:>9.4f} {tf:>9.4f} {td:>10.4f} {w:>9.4f} {p:>7.4f}")
        return "\n".join(lines)


def compute_weights(stats: Sequence[ClusterStats], lambda_ade=1.0, lambda_fde=1.0, lambda_d=1.0) -> WeightTable:
    stats = sorted(stats, key=lambda s: s.cluster_id)
    live = [s for s in stats if s.count > 0]
    if not live:
        raise DegenerateWeightsError("every cluster is empty")
    ade_max = max(s.ade for s in live)
    fde_max = max(s.fde for s in live)
    total = sum(s.count for s in stats)
    weights, terms = [], []
    for s in stats:
        if s.count == 0:
            weights.append(0.0)
            terms.append((0.0, 0.0, 0.0))
            continue
        ta = lambda_ade * s.ade / ade_max if ade_max > 0 else 0.0
        tf = lambda_fde * s.fde / fde_max if fde_max > 0 else 0.0
        td = lambda_d * s.count / total
        terms.append((ta, tf, td))
        weights.append(ta + tf + td)
    mass = sum(weights)
    if not mass > 0 or any(w < 0 for w in weights):
        raise DegenerateWeightsError(
            f"weights {weights} do not form a distribution (lambda_ade={lambda_ade}, "
            f"lambda_fde={lambda_fde}, lambda_d={lambda_d})"
        )
    probs = tuple(w / mass for w in weights)
    return WeightTable(float(lambda_ade), float(lambda_fde), float(lambda_d), tuple(weights), probs, tuple(terms))


def normalized_sample_weights(table: WeightTable, cluster_ids: Sequence[int]) -> np.ndarray:
    """Per-sample Lambda rescaled to mean 1 over the given (training) samples."""
    w = table.sample_weights(cluster_ids)
    mean = w.mean() if len(w) else 0.0
    if not mean > 0:
        raise DegenerateWeightsError("all training samples have zero weight")
    return w / mean


def per_sample_sq_error(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((pred - target) ** 2).flatten(1).sum(dim=1)


def weighted_l2_loss(pred: torch.Tensor, target: torch.Tensor, weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Batch mean of ``w_s * ||pred_s - target_s||^2`` (sum over steps and coordinates)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    se = per_sample_sq_error(pred, target)
    if weights is None:
        return se.mean()
    weights = torch.as_tensor(weights, dtype=se.dtype)
    if weights.shape != se.shape:
        raise ValueError("one weight per sample is required")
    if bool((weights < 0).any()):
        raise ValueError("sample weights must be non-negative")
    return (weights * se).mean()


def sampling_probs(
    cluster_ids: Sequence[int], table: Optional[WeightTable] = None, cluster_first: bool = False
) -> np.ndarray:
    """Per-sample draw probabilities.

    Default: proportional to the sample's cluster Lambda.  With
    ``cluster_first`` a cluster is drawn with probability p_i and then a
    member uniformly, i.e. p_s = p_i / n_i.
    """
    ids = np.asarray(cluster_ids, dtype=np.int64)
    if table is None:
        w = np.ones(len(ids))
    elif cluster_first:
        sizes = np.bincount(ids, minlength=table.k).astype(np.float64)
        lam = np.asarray(table.weights, dtype=np.float64)
        w = np.where(sizes[ids] > 0, lam[ids] / np.maximum(sizes[ids], 1.0), 0.0)
    else:
        w = table.sample_weights(ids)
    if not w.max(initial=0.0) > 0:
        raise DegenerateWeightsError("every sample has zero sampling weight")
    # rescale by the max first so equal weights become exactly the uniform vector
    w = w / w.max()
    return w / w.sum()


class WeightedBatchSampler:
    """Multinomial batch sampler (with replacement).

    Each epoch yields ``ceil(n / batch_size)`` index batches.  With no weight
    table every sample is equally likely, which is the vanilla loader.
    """

    def __init__(
        self,
        cluster_ids: Sequence[int],
        table: Optional[WeightTable] = None,
        batch_size: int = 64,
        seed: int = 0,
        cluster_first: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        self.n = len(cluster_ids)
        if self.n == 0:
            raise ValueError("cannot sample from an empty dataset")
        self.probs = sampling_probs(cluster_ids, table, cluster_first)
        self.batch_size = int(batch_size)
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def __len__(self) -> int:
        return math.ceil(self.n / self.batch_size)

    def __iter__(self) -> Iterator[np.ndarray]:
        for _ in range(len(self)):
            yield self.rng.choice(self.n, size=self.batch_size, replace=True, p=self.probs)


def weighted_batch_sampler(assignments, table, batch_size, seed, cluster_first=False) -> WeightedBatchSampler:
    return WeightedBatchSampler(assignments, table, batch_size, seed, cluster_first)
