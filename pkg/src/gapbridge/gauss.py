"""Gaussian bias parameters and the numerics they rest on.

The bias between image and text embeddings is modeled as a full-covariance
Gaussian. Covariances are carried as lower-triangular Cholesky factors with
positive diagonals: sampling is ``L z + mean``, whitening is the reverse
triangular solve, and log-determinants come from the factor's diagonal. All
math here is float64; the float32 file boundary lives in :mod:`embio`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .embio import EmbeddingMatrix, read_embeddings, write_embeddings
from .errors import (
    FormatError,
    InsufficientDataError,
    NotPositiveDefiniteError,
    ValidationError,
)
from .rng import SeededRng

logger = logging.getLogger(__name__)

PROVENANCES = ("setting1", "setting2", "fitted", "synthetic-truth")

# Relative jitter rungs, scaled by max(1, trace/dim). The first rung that
# factorizes wins; reaching the end of the ladder is an error.
DEFAULT_JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-3)

_SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class JitterPolicy:
    """Escalating diagonal loading used when a covariance is not quite PD."""

    ladder: tuple[float, ...] = DEFAULT_JITTER_LADDER

    def __post_init__(self) -> None:
        if not self.ladder:
            raise ValidationError("jitter ladder must not be empty")
        if any(b < a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValidationError("jitter ladder must be non-decreasing")


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector plus lower-triangular Cholesky factor of the covariance."""

    mean: np.ndarray
    chol: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        chol = np.ascontiguousarray(self.chol, dtype=np.float64)
        if mean.ndim != 1:
            raise ValidationError(f"mean must be 1-d, got shape {mean.shape}")
        d = mean.shape[0]
        if chol.shape != (d, d):
            raise ValidationError(f"chol shape {chol.shape} does not match dim {d}")
        if not (np.isfinite(mean).all() and np.isfinite(chol).all()):
            raise ValidationError("parameters contain NaN or Inf")
        if np.any(np.triu(chol, k=1) != 0.0):
            raise ValidationError("chol must be lower-triangular (upper entries exactly 0)")
        if np.any(np.diag(chol) <= 0.0):
            bad = int(np.where(np.diag(chol) <= 0.0)[0][0])
            raise ValidationError(f"chol diagonal entry {bad} is not positive")
        if self.provenance not in PROVENANCES:
            raise ValidationError(
                f"provenance {self.provenance!r} not in {PROVENANCES}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def covariance(self) -> np.ndarray:
        cov = self.chol @ self.chol.T
        return 0.5 * (cov + cov.T)


def estimate_moments(rows: np.ndarray, estimator: str = "unbiased") -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance of ``rows`` (n, d).

    ``estimator`` selects the covariance denominator: ``"unbiased"`` divides
    by n-1 (needs n >= 2), ``"biased"`` by n (needs n >= 1). The returned
    covariance is exactly symmetric.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValidationError(f"rows must be 2-d, got shape {rows.shape}")
    n = rows.shape[0]
    if estimator == "unbiased":
        if n < 2:
            raise InsufficientDataError(f"unbiased covariance needs n >= 2, got {n}")
        denom = n - 1
    elif estimator == "biased":
        if n < 1:
            raise InsufficientDataError("biased covariance needs n >= 1")
        denom = n
    else:
        raise ValidationError(f"unknown estimator {estimator!r}")
    if not np.isfinite(rows).all():
        raise ValidationError("rows contain NaN or Inf")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / denom
    return mean, 0.5 * (cov + cov.T)


def _manual_cholesky(matrix: np.ndarray) -> tuple[np.ndarray | None, int]:
    """Row-by-row factorization; on failure returns (None, failing pivot)."""
    d = matrix.shape[0]
    L = np.zeros_like(matrix)
    for i in range(d):
        s = matrix[i, i] - np.dot(L[i, :i], L[i, :i])
        if s <= 0.0 or not math.isfinite(s):
            return None, i
        L[i, i] = math.sqrt(s)
        if i + 1 < d:
            L[i + 1 :, i] = (matrix[i + 1 :, i] - L[i + 1 :, :i] @ L[i, :i]) / L[i, i]
    return L, -1


def cholesky_with_jitter(
    cov: np.ndarray, policy: JitterPolicy | None = None
) -> tuple[np.ndarray, float]:
    """Lower-triangular factor of ``cov``, escalating the jitter ladder.

    Rungs are relative: the diagonal loading actually applied is
    ``rung * max(1, trace/dim)``. Returns ``(L, applied_jitter)``; exhausting
    the ladder raises :class:`NotPositiveDefiniteError` carrying the index of
    the first failing pivot at the largest rung.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"covariance must be square, got shape {cov.shape}")
    if not np.isfinite(cov).all():
        raise ValidationError("covariance contains NaN or Inf")
    scale = max(1.0, float(np.abs(cov).max()))
    asym = float(np.abs(cov - cov.T).max())
    if asym > _SYMMETRY_TOL * scale:
        raise ValidationError(f"covariance is not symmetric (max asymmetry {asym:.3e})")
    cov = 0.5 * (cov + cov.T)
    policy = policy or JitterPolicy()
    d = cov.shape[0]
    unit = max(1.0, float(np.trace(cov)) / d)
    eye = np.eye(d)
    last_pivot = 0
    for rung in policy.ladder:
        lam = rung * unit
        target = cov if lam == 0.0 else cov + lam * eye
        try:
            L = np.linalg.cholesky(target)
        except np.linalg.LinAlgError:
            _, last_pivot = _manual_cholesky(target)
            continue
        if lam > 0.0:
            logger.info("cholesky succeeded with jitter %.3e (rung %.1e)", lam, rung)
        return L, lam
    raise NotPositiveDefiniteError(
        f"not positive definite even with jitter rung {policy.ladder[-1]:.1e} "
        f"(first failing pivot: {last_pivot})",
        pivot_index=last_pivot,
    )


def cholesky(cov: np.ndarray, policy: JitterPolicy | None = None) -> np.ndarray:
    """Jitter-laddered Cholesky factor (see :func:`cholesky_with_jitter`)."""
    L, _ = cholesky_with_jitter(cov, policy)
    return L


def sample_noise(params: GaussianParams, n: int, rng: SeededRng) -> np.ndarray:
    """Draw n rows from N(mean, L L^T) as ``z @ L^T + mean``."""
    if n < 1:
        raise ValidationError(f"sample count must be positive, got {n}")
    z = rng.normal((n, params.dim))
    return z @ params.chol.T + params.mean


def whiten(deltas: np.ndarray, params: GaussianParams) -> np.ndarray:
    """Map rows of ``deltas`` through L^{-1}(row - mean)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 2 or deltas.shape[1] != params.dim:
        raise ValidationError(
            f"deltas shape {deltas.shape} does not match dim {params.dim}"
        )
    shifted = deltas - params.mean
    return solve_triangular(params.chol, shifted.T, lower=True).T


def kl_to_standard(
    mean: np.ndarray, cov: np.ndarray, policy: JitterPolicy | None = None
) -> float:
    """KL divergence from N(mean, cov) to the standard normal.

    Closed form 0.5 (tr cov + mean.mean - d - ln det cov); the log-determinant
    is 2 sum(ln L_ii) from the jitter-laddered factor, the trace is taken on
    the raw covariance. A covariance that only factorizes at a high rung
    yields a large finite value rather than an error, except when the ladder
    is exhausted entirely.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 1:
        raise ValidationError(f"mean must be 1-d, got shape {mean.shape}")
    d = mean.shape[0]
    L, _ = cholesky_with_jitter(cov, policy)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return 0.5 * (float(np.trace(np.asarray(cov, dtype=np.float64))) + float(mean @ mean) - d - logdet)


def save_params(params: GaussianParams, path: str | Path) -> None:
    """Write params as JSON alongside two EMB1 blobs (mean 1xd, chol dxd)."""
    path = Path(path)
    mean_name = path.stem + "_mean.emb"
    chol_name = path.stem + "_chol.emb"
    write_embeddings(
        EmbeddingMatrix(rows=params.mean.reshape(1, -1).astype(np.float32)),
        path.parent / mean_name,
    )
    write_embeddings(
        EmbeddingMatrix(rows=params.chol.astype(np.float32)),
        path.parent / chol_name,
    )
    payload = {
        "dim": params.dim,
        "provenance": params.provenance,
        "mean_path": mean_name,
        "chol_path": chol_name,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_params(path: str | Path) -> GaussianParams:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("dim", "provenance", "mean_path", "chol_path"):
        if key not in payload:
            raise FormatError(f"{path}: missing key {key!r}")
    mean = read_embeddings(path.parent / payload["mean_path"]).as_f64()
    chol = read_embeddings(path.parent / payload["chol_path"]).as_f64()
    d = int(payload["dim"])
    if mean.shape != (1, d):
        raise ValidationError(f"{path}: mean blob shape {mean.shape} != (1, {d})")
    if chol.shape != (d, d):
        raise ValidationError(f"{path}: chol blob shape {chol.shape} != ({d}, {d})")
    # float32 storage keeps upper-triangle zeros and diagonal signs intact.
    return GaussianParams(mean=mean[0], chol=chol, provenance=payload["provenance"])
