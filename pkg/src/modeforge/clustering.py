"""k-means over discriminator features and label matching across rounds."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .core import ModeAssignment, one_hot_matrix


@dataclass(frozen=True)
class ClusteringState:
    k: int
    centroids: np.ndarray  # (k, feature_dim)
    labels: np.ndarray  # (n,) cluster id per training sample
    round: int = 0
    seed: int = 0
    # per-dimension standardization applied before distances (identity when None)
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        cents = np.asarray(self.centroids, dtype=np.float64)
        if (self.center is None) != (self.scale is None):
            raise ValueError("center and scale must be given together")
        if self.center is not None:
            object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
            object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if cents.shape[0] != self.k:
            raise ValueError(f"expected {self.k} centroids, got {cents.shape[0]}")
        if not np.all(np.isfinite(cents)):
            raise ValueError("centroids must be finite")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError("cluster ids outside [0, k)")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "centroids", cents)

    @property
    def n(self) -> int:
        return len(self.labels)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def one_hot(self) -> np.ndarray:
        return one_hot_matrix(self.labels, self.k)

    def assignments(self) -> list[ModeAssignment]:
        return [ModeAssignment.from_id(int(c), self.k, self.round) for c in self.labels]

    def transform(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if self.center is None:
            return feats
        return (feats - self.center) / self.scale

    def raw_centroids(self) -> np.ndarray:
        """Centroids in the untransformed feature space."""
        if self.center is None:
            return self.centroids
        return self.centroids * self.scale + self.center

    def assign(self, features: np.ndarray) -> np.ndarray:
        """Nearest-centroid ids for new feature rows (ties go to the lower id)."""
        return nearest_centroid(self.transform(features), self.centroids)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "round": self.round,
            "seed": self.seed,
            "centroids": self.centroids.tolist(),
            "labels": self.labels.tolist(),
            "center": None if self.center is None else self.center.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusteringState":
        center, scale = d.get("center"), d.get("scale")
        return cls(
            d["k"], np.asarray(d["centroids"]), np.asarray(d["labels"]), d["round"], d["seed"],
            None if center is None else np.asarray(center), None if scale is None else np.asarray(scale),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ClusteringState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def nearest_centroid(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if len(feats) == 0:
        return np.zeros(0, dtype=np.int64)
    d2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def cluster_features(
    features: np.ndarray, k: int, seed: int = 0, round: int = 0, n_init: int = 10, standardize: bool = False
) -> ClusteringState:
    """k-means++ seeding followed by Lloyd iterations (tol 1e-6, at most 300).

    The best of ``n_init`` seeded restarts (lowest inertia) is kept. With
    ``standardize`` every feature dimension is z-scored first (constant
    dimensions keep unit scale) and the state remembers the transform.
    """
    feats = np.asarray(features, dtype=np.float64)
    center = scale = None
    if standardize:
        center = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        feats = (feats - center) / scale
    n = len(feats)
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} samples")
    if k == 1:
        centroid = feats.mean(axis=0, keepdims=True)
        return ClusteringState(1, centroid, np.zeros(n, dtype=np.int64), round, seed, center, scale)
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=300, tol=1e-6, random_state=seed, algorithm="lloyd")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km.fit(feats)
    # final labels against the returned centroids, so ``assign`` agrees with training labels
    labels = nearest_centroid(feats, km.cluster_centers_)
    return ClusteringState(k, km.cluster_centers_, labels, round, seed, center, scale)


def greedy_match(old_centroids: np.ndarray, new_centroids: np.ndarray) -> np.ndarray:
    """Bijection ``perm`` with new cluster j -> old id ``perm[j]``.

    Pairs are taken greedily in order of increasing centroid distance.
    """
    k = len(old_centroids)
    d = np.linalg.norm(new_centroids[:, None, :] - old_centroids[None, :, :], axis=2)
    order = np.argsort(d, axis=None, kind="stable")
    perm = np.full(k, -1, dtype=np.int64)
    used = np.zeros(k, dtype=bool)
    for flat in order:
        j, i = divmod(int(flat), k)
        if perm[j] < 0 and not used[i]:
            perm[j] = i
            used[i] = True
    return perm


def refresh_centroids(state: ClusteringState, features: np.ndarray) -> ClusteringState:
    """Keep the assignments; recompute centroids (and standardization) from new features.

    Used after the feature extractor moved on but the labels must stay the
    ones a conditioned model was trained with. Empty clusters keep their
    previous centroid.
    """
    feats = np.asarray(features, dtype=np.float64)
    if len(feats) != state.n:
        raise ValueError(f"expected {state.n} feature rows, got {len(feats)}")
    center = scale = None
    if state.center is not None:
        center = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        feats = (feats - center) / scale
    old = state.raw_centroids()
    cents = np.empty((state.k, feats.shape[1]))
    for c in range(state.k):
        members = feats[state.labels == c]
        if len(members):
            cents[c] = members.mean(axis=0)
        else:
            cents[c] = old[c] if center is None else (old[c] - center) / scale
    return ClusteringState(state.k, cents, state.labels, state.round, state.seed, center, scale)


def recluster_and_match(
    old: ClusteringState, new_features: np.ndarray, seed: Optional[int] = None
) -> ClusteringState:
    """Recluster and relabel so cluster ids keep their meaning across rounds."""
    fresh = cluster_features(
        new_features, old.k, old.seed if seed is None else seed, standardize=old.center is not None
    )
    # match in the raw feature space, since the standardization drifts between rounds
    perm = greedy_match(old.raw_centroids(), fresh.raw_centroids())
    centroids = np.empty_like(fresh.centroids)
    centroids[perm] = fresh.centroids
    return ClusteringState(
        old.k, centroids, perm[fresh.labels], old.round + 1, fresh.seed, fresh.center, fresh.scale
    )
