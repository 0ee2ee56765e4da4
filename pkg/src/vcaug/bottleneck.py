"""Speaker normalisation followed by K-means quantisation of encoder features.

This block strips speaker information before the content encoder. It is fit
once, before the neural modules are trained, and stays frozen afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from sklearn.cluster import kmeans_plusplus

from .errors import ValidationError
from .features import FeatureSequence

EPS = 1e-8


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    variance: np.ndarray
    n_frames: int

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValidationError("normalization stats need at least one frame")
        if np.any(self.variance < 0):
            raise ValidationError("variance must be nonnegative")

    def save(self, path: str | Path) -> None:
        np.savez(path, mean=self.mean, variance=self.variance, n_frames=self.n_frames)

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationStats":
        with np.load(path) as data:
            return cls(data["mean"], data["variance"], int(data["n_frames"]))


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # [K, D]
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValidationError(f"codebook must be [K>=1, D], got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("codebook contains non-finite values")
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path: str | Path) -> None:
        np.savez(path, centroids=self.centroids, fit_metadata=json.dumps(self.fit_metadata))

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        with np.load(path) as data:
            return cls(data["centroids"], json.loads(str(data["fit_metadata"])))


def _as_matrices(features: Iterable[FeatureSequence | np.ndarray]) -> list[np.ndarray]:
    mats = []
    for f in features:
        m = f.vectors if isinstance(f, FeatureSequence) else np.asarray(f)
        mats.append(np.asarray(m, dtype=np.float64))
    return mats


def fit_stats(features: Iterable[FeatureSequence | np.ndarray]) -> NormalizationStats:
    """Exact population mean and variance over every frame of every sequence (two passes)."""
    mats = [m for m in _as_matrices(features) if m.shape[0] > 0]
    n = sum(m.shape[0] for m in mats)
    if n == 0:
        raise ValidationError("fit_stats needs at least one frame")
    mean = sum(m.sum(axis=0) for m in mats) / n
    variance = sum(((m - mean) ** 2).sum(axis=0) for m in mats) / n
    return NormalizationStats(mean, variance, n)


def normalize(f: FeatureSequence, stats: NormalizationStats, eps: float = EPS) -> FeatureSequence:
    out = (f.vectors - stats.mean) / np.sqrt(stats.variance + eps)
    return f.replace(out)


def nearest_centroid(x: np.ndarray, centroids: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Index of the nearest centroid per row (squared Euclidean), lowest index on ties.

    Distances are summed from explicit differences rather than the
    ``|x|^2 - 2xc + |c|^2`` expansion so that exact ties stay exact.
    """
    x = np.asarray(x, dtype=np.float64)
    idx = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), chunk):
        block = x[start : start + chunk]
        d = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
        idx[start : start + chunk] = d.argmin(axis=1)
    return idx


def quantize(f: FeatureSequence, cb: Codebook) -> FeatureSequence:
    if f.dim != cb.dim:
        raise ValidationError(f"feature dim {f.dim} does not match codebook dim {cb.dim}")
    return f.replace(cb.centroids[nearest_centroid(f.vectors, cb.centroids)])


def _inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def fit_codebook(
    features: Iterable[FeatureSequence | np.ndarray],
    k: int = 100,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    metadata: dict | None = None,
) -> Codebook:
    """Lloyd's K-means with k-means++ seeding.

    Stops when the relative inertia improvement drops below ``tol`` or after
    ``max_iter`` iterations. Empty clusters are re-seeded with the point
    farthest from its current centroid.
    """
    mats = _as_matrices(features)
    x = np.concatenate(mats, axis=0) if mats else np.empty((0, 0))
    if len(x) < k:
        raise ValidationError(f"need at least K={k} frames to fit the codebook, got {len(x)}")
    if len(np.unique(x, axis=0)) < k:
        raise ValidationError(f"need at least K={k} distinct frames to fit the codebook")
    centroids, _ = kmeans_plusplus(x, n_clusters=k, random_state=seed)
    centroids = centroids.astype(np.float64)
    labels = nearest_centroid(x, centroids)
    inertia = _inertia(x, centroids, labels)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = np.zeros_like(centroids)
        counts = np.bincount(labels, minlength=k)
        np.add.at(new, labels, x)
        filled = counts > 0
        new[filled] /= counts[filled, None]
        if not filled.all():
            err = ((x - centroids[labels]) ** 2).sum(axis=1)
            for j in np.flatnonzero(~filled):
                far = int(err.argmax())
                new[j] = x[far]
                err[far] = -1.0
        centroids = new
        labels = nearest_centroid(x, centroids)
        current = _inertia(x, centroids, labels)
        improvement = (inertia - current) / max(inertia, 1e-300)
        inertia = current
        if improvement < tol:
            break
    meta = {"n_training_frames": int(len(x)), "iterations": int(iterations), "inertia": inertia, "seed": seed}
    meta.update(metadata or {})
    return Codebook(centroids, meta)
