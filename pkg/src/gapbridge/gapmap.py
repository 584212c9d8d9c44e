"""Forward mapping: text embeddings to pseudo image embeddings.

The gap between the image and text sides of a joint embedding space is
modeled as additive Gaussian noise. This module estimates that Gaussian from
whatever supervision is available (paired rows, or web pairs corrected
toward an unpaired corpus), applies it (``map_forward``), and scores a
candidate Gaussian against a batch of observed differences with a whitened
KL-to-standard-normal loss (``lmap_loss``) whose analytic gradients drive
the trainable settings.

Trainable parameterization of the factor: ``L = strict_lower + diag(exp(s))``
with free parameters (strict_lower, s, mean) — the exponential keeps the
diagonal positive under unconstrained gradient steps. ``lmap_loss`` returns
its factor gradient in exactly that parameter space: strict-lower entries in
the strict-lower triangle, d(loss)/d(s_i) on the diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .embio import EmbeddingMatrix, l2_normalize
from .errors import InsufficientDataError, PairingError, ValidationError
from .gauss import (
    GaussianParams,
    cholesky,
    cholesky_with_jitter,
    estimate_moments,
    sample_noise,
)
from .rng import SeededRng

logger = logging.getLogger(__name__)

BATCH_SOURCES = ("paired", "web-corrected", "cross-unpaired", "pseudo")


@dataclass(frozen=True)
class MappingModule:
    """A Gaussian noise model plus how it may be used."""

    params: GaussianParams
    trainable: bool = False
    renormalize_after_map: bool = False

    def __post_init__(self) -> None:
        if not self.trainable and self.params.provenance == "fitted":
            raise ValidationError(
                "a frozen mapping must come from an estimator or synthetic truth, "
                "not from 'fitted' parameters"
            )


@dataclass(frozen=True)
class BiasBatch:
    """A batch of observed image-minus-text differences."""

    deltas: np.ndarray
    source: str

    def __post_init__(self) -> None:
        deltas = np.ascontiguousarray(self.deltas, dtype=np.float64)
        if deltas.ndim != 2:
            raise ValidationError(f"deltas must be 2-d, got shape {deltas.shape}")
        if deltas.shape[0] < 2:
            raise ValidationError(f"a bias batch needs n >= 2, got {deltas.shape[0]}")
        if not np.isfinite(deltas).all():
            raise ValidationError("deltas contain NaN or Inf")
        if self.source not in BATCH_SOURCES:
            raise ValidationError(f"source {self.source!r} not in {BATCH_SOURCES}")
        object.__setattr__(self, "deltas", deltas)


def _as_f64(matrix: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    if isinstance(matrix, EmbeddingMatrix):
        return matrix.as_f64()
    return np.asarray(matrix, dtype=np.float64)


def _paired_deltas(images, texts) -> np.ndarray:
    img = _as_f64(images)
    txt = _as_f64(texts)
    if img.shape[1] != txt.shape[1]:
        raise PairingError(f"dim mismatch: {img.shape[1]} vs {txt.shape[1]}")
    if img.shape[0] != txt.shape[0]:
        raise PairingError(f"count mismatch: {img.shape[0]} vs {txt.shape[0]}")
    return img - txt


def estimate_setting1(images, texts) -> GaussianParams:
    """Estimate the bias Gaussian from aligned image/text rows.

    Row differences feed the unbiased moment estimator; the covariance is
    factorized through the jitter ladder so that even a rank-deficient batch
    (e.g. images identical to texts) yields valid parameters.
    """
    deltas = _paired_deltas(images, texts)
    n, d = deltas.shape
    if n < 2:
        raise InsufficientDataError(f"paired estimation needs n >= 2, got {n}")
    if n < d + 1:
        logger.warning("only %d pairs for dim %d; covariance will be rank-deficient", n, d)
    mean, cov = estimate_moments(deltas, estimator="unbiased")
    return GaussianParams(mean=mean, chol=cholesky(cov), provenance="setting1")


def estimate_setting2(
    web_images,
    web_texts,
    corpus_texts,
    correct_covariance: bool = True,
) -> GaussianParams:
    """Web-pair estimate corrected toward an unpaired text corpus.

    The web pair gives a bias estimate relative to *web* captions; the
    correction re-anchors it to the corpus the downstream model will see:
    mean_shift = mean(corpus) - mean(web texts), subtracted from the web
    bias mean. The correction term's covariance has no pairing to estimate
    it from, so the default treats corpus and web texts as independent draws
    (sum of covariances); ``correct_covariance=False`` keeps the web
    covariance untouched (mean-only correction).
    """
    deltas = _paired_deltas(web_images, web_texts)
    n, d = deltas.shape
    if n < 2:
        raise InsufficientDataError(f"web-pair estimation needs n >= 2, got {n}")
    corpus = _as_f64(corpus_texts)
    if corpus.ndim != 2 or corpus.shape[0] < 1:
        raise InsufficientDataError("corpus is empty")
    if corpus.shape[1] != d:
        raise PairingError(f"corpus dim {corpus.shape[1]} does not match {d}")
    if corpus.shape[0] < 2:
        raise InsufficientDataError(
            f"corpus correction needs n >= 2 corpus rows, got {corpus.shape[0]}"
        )
    mean_web, cov_web = estimate_moments(deltas, estimator="unbiased")
    mean_corpus, cov_corpus = estimate_moments(corpus, estimator="unbiased")
    mean_webtxt, cov_webtxt = estimate_moments(_as_f64(web_texts), estimator="unbiased")
    mean = mean_web - (mean_corpus - mean_webtxt)
    if correct_covariance:
        cov = cov_web + cov_corpus + cov_webtxt
    else:
        cov = cov_web
    return GaussianParams(mean=mean, chol=cholesky(cov), provenance="setting2")


def map_forward(texts, module: MappingModule, rng: SeededRng) -> EmbeddingMatrix:
    """texts + sampled noise; optionally re-normalized rows."""
    txt = _as_f64(texts)
    if txt.ndim != 2:
        raise ValidationError(f"texts must be 2-d, got shape {txt.shape}")
    if txt.shape[1] != module.params.dim:
        raise ValidationError(
            f"texts dim {txt.shape[1]} does not match params dim {module.params.dim}"
        )
    mapped = txt + sample_noise(module.params, txt.shape[0], rng)
    ids = texts.ids if isinstance(texts, EmbeddingMatrix) else None
    out = EmbeddingMatrix(rows=mapped.astype(np.float32), ids=ids)
    if module.renormalize_after_map:
        out = l2_normalize(out)
    return out


def map_forward_f64(texts: np.ndarray, mean: np.ndarray, chol: np.ndarray, rng: SeededRng) -> np.ndarray:
    """Training-side mapping that stays in float64 (no file-boundary cast)."""
    z = rng.normal(texts.shape)
    return texts + z @ chol.T + mean


def _lmap_value_and_grads(
    deltas: np.ndarray, mean: np.ndarray, chol: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss plus gradients wrt (mean, factor parameterization, deltas).

    Returns ``(loss, grad_mean, grad_chol, grad_deltas)`` where grad_chol is
    a lower-triangular matrix holding d(loss)/d(strict_lower) off the
    diagonal and d(loss)/d(s) on it (s = log of the factor diagonal).

    Derivation sketch: with eps = L^{-1}(delta - mean) (rows), m its batch
    mean, C the centered rows and S = C^T C / n (biased), the loss is
    0.5 (tr S + m.m - d - ln det S_j) with S_j the jitter-loaded S. Writing
    G = 0.5 (I - S_j^{-1}), d(loss)/d(eps) = (2/n) C G + (1/n) 1 m^T; the
    chain back through the whitening solve gives d(loss)/d(deltas) =
    d(loss)/d(eps) L^{-1}, d(loss)/d(mean) = -column sums of that, and
    d(loss)/d(L) = -L^{-T} (d(loss)/d(eps))^T eps.
    """
    n, d = deltas.shape
    shifted = deltas - mean
    eps = solve_triangular(chol, shifted.T, lower=True).T
    m = eps.mean(axis=0)
    centered = eps - m
    S = centered.T @ centered / n
    S = 0.5 * (S + S.T)
    LS, lam = cholesky_with_jitter(S)
    logdet = 2.0 * float(np.log(np.diag(LS)).sum())
    loss = 0.5 * (float(np.trace(S)) + float(m @ m) - d - logdet)

    S_inv = _chol_inverse_spd(LS)
    G = 0.5 * (np.eye(d) - S_inv)
    d_eps = (2.0 / n) * centered @ G + m / n
    # grad wrt deltas: d_eps @ L^{-1}  (solve on the transpose)
    grad_deltas = solve_triangular(chol.T, d_eps.T, lower=False).T
    grad_mean = -grad_deltas.sum(axis=0)
    dL = -solve_triangular(chol.T, d_eps.T @ eps, lower=False)
    grad_chol = np.tril(dL, k=-1)
    grad_chol[np.diag_indices(d)] = np.diag(dL) * np.diag(chol)
    if lam > 0.0:
        logger.debug("lmap batch covariance needed jitter %.3e", lam)
    return loss, grad_mean, grad_chol, grad_deltas


def _chol_inverse_spd(L: np.ndarray) -> np.ndarray:
    """(L L^T)^{-1} from the factor, symmetrized."""
    inv_L = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    inv = inv_L.T @ inv_L
    return 0.5 * (inv + inv.T)


def lmap_loss(
    batch: BiasBatch, params: GaussianParams
) -> tuple[float, np.ndarray, np.ndarray]:
    """Whitened-batch KL to the standard normal, with analytic gradients."""
    if batch.deltas.shape[1] != params.dim:
        raise ValidationError(
            f"batch dim {batch.deltas.shape[1]} does not match params dim {params.dim}"
        )
    loss, grad_mean, grad_chol, _ = _lmap_value_and_grads(
        batch.deltas, params.mean, params.chol
    )
    return loss, grad_mean, grad_chol
