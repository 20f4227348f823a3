"""Small stand-ins for the alignment, perceptual and distributional metrics.

None of these are the real network-based metrics; every value they produce
is a proxy and is labelled as such in run records.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError
from .numerics import RngStream, matmul

PROXY_NOTE = ("proxy metrics: alignment=cosine of projected toy features, perceptual=3-scale mean "
              "abs pixel difference, frechet_shift=diagonal-covariance Frechet distance; values are "
              "not comparable to CLIP / LPIPS / FID numbers on real models")


@dataclass
class MetricBundle:
    alignment: float
    perceptual_distance: float
    feature_vector: list[float]

    def to_dict(self) -> dict:
        return {"alignment": self.alignment, "perceptual_distance": self.perceptual_distance,
                "feature_vector": list(self.feature_vector), "proxy": True}


class Projections:
    """Fixed seeded projections shared by every run of an experiment."""

    def __init__(self, d_model: int, d_feat: int = 16, seed: int = 7):
        root = RngStream(seed).child("proxymetrics")
        bound = 1.0 / np.sqrt(d_model)
        self.align = root.child("align").uniform_array(d_model * d_model, -bound, bound).reshape(d_model, d_model)
        self.feature = root.child("feature").uniform_array(d_model * d_feat, -bound, bound).reshape(d_model, d_feat)

    def features(self, pooled: np.ndarray) -> np.ndarray:
        return matmul(np.asarray(pooled, dtype=np.float64)[None, :], self.feature)[0]


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine of a zero-norm vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def alignment_proxy(pooled_features, prompt_features, projection: np.ndarray) -> float:
    """Cosine between projected pooled image features and projected mean text features."""
    img = np.asarray(pooled_features, dtype=np.float64)
    txt = np.asarray(prompt_features, dtype=np.float64).mean(axis=0)
    if img.shape != txt.shape:
        raise ShapeError(f"feature sizes differ: {img.shape} vs {txt.shape}")
    return cosine(matmul(img[None, :], projection)[0], matmul(txt[None, :], projection)[0])


def _box_down(img: np.ndarray, f: int) -> np.ndarray:
    h, w, c = img.shape
    return img[: h - h % f, : w - w % f].reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))


def perceptual_distance(img_a, img_b) -> float:
    """Average over scales 1, 2, 4 of the mean absolute pixel difference."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"image shapes differ or are not HxWxC: {a.shape} vs {b.shape}")
    total = 0.0
    for f in (1, 2, 4):
        total += float(np.abs(_box_down(a, f) - _box_down(b, f)).mean())
    return total / 3.0


def frechet_shift(features_a, features_b) -> float:
    """Frechet distance between diagonal Gaussians fitted to two feature sets."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] < 2 or b.shape[0] < 2:
        raise DomainError("frechet_shift needs at least two feature vectors per set")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("feature dimensions differ")
    mu = a.mean(axis=0) - b.mean(axis=0)
    va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
    d = float(mu @ mu + (va + vb - 2.0 * np.sqrt(va * vb)).sum())
    return max(d, 0.0)
