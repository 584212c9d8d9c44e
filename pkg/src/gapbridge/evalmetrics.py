"""Gap-closure evaluation: retrieval, residual KL, similarity divergence,
per-dimension residual histograms, and planted-parameter recovery error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, PairingError, ValidationError
from .gapmap import _as_f64, map_forward_f64
from .gauss import GaussianParams, estimate_moments, kl_to_standard, whiten
from .revmap import ReverseMapping, cosine_loss, disti_loss, revmap_forward
from .rng import SeededRng


@dataclass(frozen=True)
class EvalReport:
    retrieval_at_1: float
    retrieval_at_5: float
    residual_kl: float
    simmatrix_div: float
    mean_pair_cosine: float
    notes: str = ""

    def __post_init__(self) -> None:
        for name in ("retrieval_at_1", "retrieval_at_5"):
            frac = getattr(self, name)
            if not 0.0 <= frac <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {frac}")
        if self.residual_kl < -1e-10 or self.simmatrix_div < -1e-10:
            raise ValidationError("divergences must be >= -1e-10")

    def to_dict(self) -> dict:
        return {
            "retrieval_at_1": self.retrieval_at_1,
            "retrieval_at_5": self.retrieval_at_5,
            "residual_kl": self.residual_kl,
            "simmatrix_div": self.simmatrix_div,
            "mean_pair_cosine": self.mean_pair_cosine,
            "notes": self.notes,
        }


def _unit_rows(x, who: str) -> np.ndarray:
    x = _as_f64(x)
    if x.ndim != 2:
        raise ValidationError(f"{who} must be 2-d, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"{who} row {int(zero[0])} has zero norm")
    return x / norms[:, None]


def retrieval_accuracy(queries, targets, k: int) -> float:
    """Fraction of queries whose index-mate ranks in the top k by cosine.

    Ties (exactly equal similarity) are broken toward the lower index, so a
    query equidistant between its mate and an earlier row counts as a miss
    at k=1 when the earlier row is involved.
    """
    q = _unit_rows(queries, "queries")
    t = _unit_rows(targets, "targets")
    if q.shape != t.shape:
        raise PairingError(f"shape mismatch: {q.shape} vs {t.shape}")
    n = q.shape[0]
    if n < 2:
        raise ValidationError(f"retrieval needs n >= 2, got {n}")
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= {n}, got k={k}")
    S = q @ t.T
    own = np.diag(S)
    idx = np.arange(n)
    ahead = (S > own[:, None]) | ((S == own[:, None]) & (idx[None, :] < idx[:, None]))
    ranks = ahead.sum(axis=1)
    return float((ranks < k).mean())


def residual_kl(images, texts, params: GaussianParams) -> float:
    """How far the whitened paired residuals are from standard normal."""
    img = _as_f64(images)
    txt = _as_f64(texts)
    if img.shape != txt.shape:
        raise PairingError(f"shape mismatch: {img.shape} vs {txt.shape}")
    eps = whiten(img - txt, params)
    mean, cov = estimate_moments(eps, estimator="biased")
    return kl_to_standard(mean, cov)


def simmatrix_divergence(a, b, temp: float = 1.0) -> float:
    """Distillation-loss value between two row sets' similarity structures."""
    loss, _ = disti_loss(_as_f64(a), _as_f64(b), temp=temp)
    return loss


def mean_pair_cosine(pred, target) -> float:
    loss, _ = cosine_loss(_as_f64(pred), _as_f64(target))
    return 1.0 - loss


def export_residual_histograms(
    images, texts, dims: list[int], bins: int
) -> list[tuple[str, float, float, int]]:
    """Per-dimension histograms of paired differences, plus a pooled view.

    Returns rows (series, bin_left, bin_right, count) where series is a
    dimension index or "global" (all coordinates pooled). Each series is
    binned over its own [min, max]; a zero-width range falls back to
    numpy's +-0.5 expansion around the single value.
    """
    img = _as_f64(images)
    txt = _as_f64(texts)
    if img.shape != txt.shape:
        raise PairingError(f"shape mismatch: {img.shape} vs {txt.shape}")
    if not dims:
        raise ValidationError("dims must not be empty")
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    d = img.shape[1]
    for dim in dims:
        if not 0 <= dim < d:
            raise ValidationError(f"dim {dim} outside [0, {d})")
    deltas = img - txt
    rows: list[tuple[str, float, float, int]] = []

    def _series(label: str, values: np.ndarray) -> None:
        counts, edges = np.histogram(values, bins=bins)
        for i in range(bins):
            rows.append((label, float(edges[i]), float(edges[i + 1]), int(counts[i])))

    for dim in dims:
        _series(str(dim), deltas[:, dim])
    _series("global", deltas.ravel())
    return rows


def write_histogram_csv(
    rows: list[tuple[str, float, float, int]], path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "bin_left", "bin_right", "count"])
        for label, left, right, count in rows:
            writer.writerow([label, repr(left), repr(right), count])


def param_recovery_error(
    estimate: GaussianParams, truth: GaussianParams
) -> tuple[float, float]:
    """(max-abs mean error, relative Frobenius covariance error)."""
    if estimate.dim != truth.dim:
        raise ValidationError(f"dim mismatch: {estimate.dim} vs {truth.dim}")
    mean_linf = float(np.abs(estimate.mean - truth.mean).max())
    cov_est = estimate.covariance()
    cov_true = truth.covariance()
    denom = float(np.linalg.norm(cov_true))
    if denom == 0.0:
        raise ValidationError("truth covariance has zero Frobenius norm")
    cov_frob_rel = float(np.linalg.norm(cov_est - cov_true)) / denom
    return mean_linf, cov_frob_rel


def build_eval_report(
    images,
    texts,
    params: GaussianParams,
    reverse: ReverseMapping,
    seed: int = 0,
) -> EvalReport:
    """Score a mapping/reverse pair against a paired image/text set."""
    img = _as_f64(images)
    txt = _as_f64(texts)
    if img.shape != txt.shape:
        raise PairingError(f"shape mismatch: {img.shape} vs {txt.shape}")
    recon = revmap_forward(img, reverse)
    r1 = retrieval_accuracy(recon, txt, k=1)
    r5 = retrieval_accuracy(recon, txt, k=min(5, txt.shape[0]))
    kl = residual_kl(img, txt, params)
    mapped = map_forward_f64(txt, params.mean, params.chol, SeededRng(seed))
    div = simmatrix_divergence(mapped, txt)
    cos = mean_pair_cosine(recon, txt)
    notes = f"n={txt.shape[0]} dim={txt.shape[1]} seed={seed}"
    return EvalReport(
        retrieval_at_1=r1,
        retrieval_at_5=r5,
        residual_kl=kl,
        simmatrix_div=div,
        mean_pair_cosine=cos,
        notes=notes,
    )
