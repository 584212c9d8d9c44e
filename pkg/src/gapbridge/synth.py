"""Synthetic embedding oracle.

Generates clustered unit-norm "text" embeddings and paired "image"
embeddings displaced by a planted, exactly-known Gaussian bias, so that
every estimator and training loop in the package can be scored against
ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embio import EmbeddingMatrix, l2_normalize
from .errors import ValidationError
from .gauss import GaussianParams, cholesky, sample_noise
from .rng import SeededRng


@dataclass(frozen=True)
class SynthSpec:
    dim: int
    count: int
    clusters: int = 8
    cluster_spread: float = 0.1
    bias_mean_scale: float = 0.05
    bias_cov_scale: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1 or self.count < 1:
            raise ValidationError(f"dim and count must be >= 1, got {self.dim}, {self.count}")
        if not 1 <= self.clusters <= self.count:
            raise ValidationError(
                f"need 1 <= clusters <= count, got {self.clusters} vs {self.count}"
            )
        for name in ("cluster_spread", "bias_mean_scale", "bias_cov_scale"):
            if getattr(self, name) <= 0.0:
                raise ValidationError(f"{name} must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError(f"seed must fit in 64 bits, got {self.seed}")


def gen_text_embeddings(spec: SynthSpec) -> EmbeddingMatrix:
    """Clustered points on the unit sphere; row i belongs to cluster i mod k."""
    rng = SeededRng(spec.seed)
    centers = rng.normal((spec.clusters, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assignment = np.arange(spec.count) % spec.clusters
    rows = centers[assignment] + spec.cluster_spread * rng.normal((spec.count, spec.dim))
    return l2_normalize(EmbeddingMatrix(rows=rows.astype(np.float32)))


def gen_bias_truth(
    dim: int, bias_mean_scale: float, bias_cov_scale: float, seed: int
) -> GaussianParams:
    """Planted bias: mean of exact norm scale*sqrt(d), SPD covariance."""
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    if bias_mean_scale <= 0.0 or bias_cov_scale <= 0.0:
        raise ValidationError("bias scales must be positive")
    rng = SeededRng(seed)
    direction = rng.normal((dim,))
    direction /= np.linalg.norm(direction)
    mean = bias_mean_scale * math.sqrt(dim) * direction
    M = rng.normal((dim, dim))
    cov = bias_cov_scale**2 * (M.T @ M / dim + np.eye(dim))
    cov = 0.5 * (cov + cov.T)
    return GaussianParams(mean=mean, chol=cholesky(cov), provenance="synthetic-truth")


def gen_paired_images(
    texts: EmbeddingMatrix,
    truth: GaussianParams,
    rng: SeededRng,
    renormalize: bool = False,
) -> EmbeddingMatrix:
    """image_i = text_i + noise_i with noise drawn from the planted truth."""
    if texts.dim != truth.dim:
        raise ValidationError(f"texts dim {texts.dim} does not match truth dim {truth.dim}")
    images = texts.as_f64() + sample_noise(truth, texts.count, rng)
    out = EmbeddingMatrix(rows=images.astype(np.float32), ids=texts.ids)
    if renormalize:
        out = l2_normalize(out)
    return out
