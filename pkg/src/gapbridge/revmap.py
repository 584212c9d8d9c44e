"""Reverse mapping (pseudo image embedding back to the text side) and the
losses that train it.

The reverse map is a single hidden layer with a smooth-gate activation
(tanh-form GELU) and expansion factor 2, deliberately without a residual
connection: reconstruction is meant to be learned, not inherited, so that
it can stay loose where a residual would make it trivially the identity.

Losses:

- ``cosine_loss``: one minus the per-pair cosine, averaged.
- ``contrastive_loss``: symmetric InfoNCE over the pred/target cosine
  matrix at temperature tau; non-negative, minimized when each row's
  diagonal similarity dominates both its row and its column.
- ``disti_loss``: relational distillation. Both sets are reduced to their
  internal cosine-similarity matrices; each row (diagonal excluded) becomes
  a softmax distribution, and the loss is the mean row-wise KL from the
  source distribution to the mapped one. Gradients flow to the mapped side
  only; the source is the frozen teacher.

All gradients are hand-derived and checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embio import EmbeddingMatrix, read_embeddings, write_embeddings
from .errors import (
    DegenerateInputError,
    FormatError,
    InsufficientDataError,
    ValidationError,
)
from .rng import SeededRng

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715
INIT_STD = 0.02


@dataclass(frozen=True)
class ReverseMapping:
    """One-hidden-layer feedforward map: y = w2 act(w1 x + b1) + b2."""

    dim: int
    expansion: int
    w1: np.ndarray  # (expansion*dim, dim)
    b1: np.ndarray  # (expansion*dim,)
    w2: np.ndarray  # (dim, expansion*dim)
    b2: np.ndarray  # (dim,)

    def __post_init__(self) -> None:
        if self.dim < 1 or self.expansion < 1:
            raise ValidationError(
                f"dim and expansion must be >= 1, got {self.dim}, {self.expansion}"
            )
        hidden = self.dim * self.expansion
        shapes = {
            "w1": (hidden, self.dim),
            "b1": (hidden,),
            "w2": (self.dim, hidden),
            "b2": (self.dim,),
        }
        for name, want in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != want:
                raise ValidationError(f"{name} shape {arr.shape} != {want}")
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains NaN or Inf")
            object.__setattr__(self, name, arr)


def init_revmap(dim: int, expansion: int = 2, seed: int = 0) -> ReverseMapping:
    """Small-weight init: weights ~ N(0, 0.02^2), biases zero."""
    rng = SeededRng(seed)
    hidden = dim * expansion
    return ReverseMapping(
        dim=dim,
        expansion=expansion,
        w1=INIT_STD * rng.normal((hidden, dim)),
        b1=np.zeros(hidden),
        w2=INIT_STD * rng.normal((dim, hidden)),
        b2=np.zeros(dim),
    )


def _gelu(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-form GELU and its derivative."""
    inner = _GELU_C * (u + _GELU_K * u**3)
    t = np.tanh(inner)
    act = 0.5 * u * (1.0 + t)
    dact = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * u * u)
    return act, dact


def revmap_forward(x: np.ndarray, module: ReverseMapping) -> np.ndarray:
    y, _ = revmap_forward_cached(x, module)
    return y


def revmap_forward_cached(
    x: np.ndarray, module: ReverseMapping
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Forward pass that keeps the activations the backward pass needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != module.dim:
        raise ValidationError(f"input shape {x.shape} does not match dim {module.dim}")
    h = x @ module.w1.T + module.b1
    act, dact = _gelu(h)
    y = act @ module.w2.T + module.b2
    return y, {"x": x, "act": act, "dact": dact}


def revmap_backward(
    module: ReverseMapping, cache: dict[str, np.ndarray], upstream: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the forward map.

    ``upstream`` is d(loss)/d(output); returns ({"w1","b1","w2","b2"}, dx).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    x, act, dact = cache["x"], cache["act"], cache["dact"]
    if upstream.shape != (x.shape[0], module.dim):
        raise ValidationError(
            f"upstream shape {upstream.shape} != {(x.shape[0], module.dim)}"
        )
    grad_w2 = upstream.T @ act
    grad_b2 = upstream.sum(axis=0)
    d_act = upstream @ module.w2
    d_h = d_act * dact
    grad_w1 = d_h.T @ x
    grad_b1 = d_h.sum(axis=0)
    dx = d_h @ module.w1
    return {"w1": grad_w1, "b1": grad_b1, "w2": grad_w2, "b2": grad_b2}, dx


def _normalize_rows(x: np.ndarray, who: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"{who} row {int(zero[0])} has zero norm")
    return x / norms[:, None], norms


def _unnormalize_grad(
    grad_hat: np.ndarray, hat: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    """Backprop through row normalization: project out the radial part."""
    radial = np.einsum("ij,ij->i", grad_hat, hat)
    return (grad_hat - radial[:, None] * hat) / norms[:, None]


def cosine_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/n) sum_i (1 - cos(pred_i, target_i)), gradient wrt pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    p_hat, p_norms = _normalize_rows(pred, "pred")
    t_hat, _ = _normalize_rows(target, "target")
    cos = np.einsum("ij,ij->i", p_hat, t_hat)
    loss = float(np.mean(1.0 - cos))
    grad_hat = -t_hat / n
    return loss, _unnormalize_grad(grad_hat, p_hat, p_norms)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def contrastive_loss(
    pred: np.ndarray, target: np.ndarray, tau: float = 0.1
) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over the cosine matrix, gradient wrt pred.

    loss = -1/2 [ mean_i log softmax_row(S/tau)_ii
                + mean_i log softmax_col(S/tau)_ii ].
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    if n < 2:
        raise InsufficientDataError(f"contrastive loss needs n >= 2, got {n}")
    if tau <= 0.0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    p_hat, p_norms = _normalize_rows(pred, "pred")
    t_hat, _ = _normalize_rows(target, "target")
    S = p_hat @ t_hat.T
    logits = S / tau
    P_row = _softmax_rows(logits)
    P_col = _softmax_rows(logits.T).T
    eye = np.eye(n)
    # -log softmax of the diagonal, computed stably from the softmax itself:
    # recover per-row log-normalizers via max-subtracted logsumexp.
    row_max = logits.max(axis=1)
    lse_row = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    col_max = logits.max(axis=0)
    lse_col = col_max + np.log(np.exp(logits - col_max[None, :]).sum(axis=0))
    diag = np.diag(logits)
    loss = 0.5 * (float(np.mean(lse_row - diag)) + float(np.mean(lse_col - diag)))
    dS = ((P_row - eye) + (P_col - eye)) / (2.0 * n * tau)
    grad_hat = dS @ t_hat
    return loss, _unnormalize_grad(grad_hat, p_hat, p_norms)


def similarity_matrix(x: np.ndarray) -> np.ndarray:
    """Internal cosine-similarity matrix of a row set."""
    x = np.asarray(x, dtype=np.float64)
    x_hat, _ = _normalize_rows(x, "rows")
    S = x_hat @ x_hat.T
    return np.clip(S, -1.0, 1.0)


def disti_loss(
    mapped: np.ndarray, source: np.ndarray, temp: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean row-wise KL between off-diagonal similarity distributions.

    Rows of the source similarity matrix are the target distributions;
    gradients are returned for the mapped side only.
    """
    mapped = np.asarray(mapped, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if mapped.shape != source.shape or mapped.ndim != 2:
        raise ValidationError(f"shape mismatch: {mapped.shape} vs {source.shape}")
    n = mapped.shape[0]
    if n < 2:
        raise InsufficientDataError(f"distillation loss needs n >= 2, got {n}")
    if temp <= 0.0:
        raise ValidationError(f"temperature must be positive, got {temp}")
    m_hat, m_norms = _normalize_rows(mapped, "mapped")
    s_hat, _ = _normalize_rows(source, "source")
    A = m_hat @ m_hat.T
    B = s_hat @ s_hat.T
    off = ~np.eye(n, dtype=bool)

    def _off_log_softmax(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logits = np.where(off, M / temp, -np.inf)
        row_max = logits.max(axis=1, keepdims=True)
        e = np.where(off, np.exp(logits - row_max), 0.0)
        z = e.sum(axis=1, keepdims=True)
        log_prob = np.where(off, logits - row_max - np.log(z), 0.0)
        return e / z, log_prob

    q, log_q = _off_log_softmax(A)
    p, log_p = _off_log_softmax(B)
    loss = float(np.where(off, p * (log_p - log_q), 0.0).sum()) / n
    dA = np.where(off, (q - p) / (n * temp), 0.0)
    grad_hat = (dA + dA.T) @ m_hat
    return loss, _unnormalize_grad(grad_hat, m_hat, m_norms)


def save_revmap(module: ReverseMapping, path: str | Path) -> None:
    """JSON manifest plus EMB1 blobs for the four weight arrays."""
    path = Path(path)
    blobs = {
        "w1": module.w1,
        "b1": module.b1.reshape(1, -1),
        "w2": module.w2,
        "b2": module.b2.reshape(1, -1),
    }
    names = {}
    for key, arr in blobs.items():
        name = f"{path.stem}_{key}.emb"
        write_embeddings(EmbeddingMatrix(rows=arr.astype(np.float32)), path.parent / name)
        names[key] = name
    payload = {"dim": module.dim, "expansion": module.expansion, **{f"{k}_path": v for k, v in names.items()}}
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_revmap(path: str | Path) -> ReverseMapping:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("dim", "expansion", "w1_path", "b1_path", "w2_path", "b2_path"):
        if key not in payload:
            raise FormatError(f"{path}: missing key {key!r}")
    arrays = {
        key: read_embeddings(path.parent / payload[f"{key}_path"]).as_f64()
        for key in ("w1", "b1", "w2", "b2")
    }
    return ReverseMapping(
        dim=int(payload["dim"]),
        expansion=int(payload["expansion"]),
        w1=arrays["w1"],
        b1=arrays["b1"][0],
        w2=arrays["w2"],
        b2=arrays["b2"][0],
    )
