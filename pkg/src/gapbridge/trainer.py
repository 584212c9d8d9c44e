"""Optimizer, schedule, and the per-setting training loops.

Three loops share the same machinery:

- ``train_fixed_mapping``: the Gaussian stays frozen (it came from an
  estimator); only the reverse map learns, by reconstructing texts from
  their noised versions (cosine + contrastive).
- ``train_setting3``: a small pool of unpaired images anchors the Gaussian.
  Each step samples images and texts independently, forms cross differences,
  and descends the whitened-KL loss on (mean, L); the reverse map trains on
  reconstruction in parallel. Reconstruction gradients do not reach the
  Gaussian: the sampled noise is treated as data for that term, so the bias
  fit is driven by the KL term alone.
- ``train_setting4``: no images at all. The pseudo difference
  (noised text minus its reconstruction) feeds the KL term, with full
  gradient flow through both the reconstruction and the sampling
  reparameterization; the distillation term keeps the noised batch's
  similarity structure close to the source texts, and the reconstruction
  losses anchor the reverse map to the clean texts. Teachers (the clean
  text embeddings) are detached everywhere.

The Gaussian block's (mean, L) are distribution parameters, not weights:
they are exempted from AdamW's decoupled weight decay (decay would drag
the log-diagonal of L toward 0, i.e. L toward the identity, regardless of
data). Two config fields exist because this artifact trains *only* the
tiny Gaussian block + a small MLP rather than a full captioner:
``map_lr_scale`` multiplies the schedule for the Gaussian parameter group
(AdamW moves any coordinate by at most ~lr per step, so the log-diagonal
of L could not otherwise travel far enough within a few thousand steps;
kept small enough that the reverse map learns reconstruction before the
noise scale moves), and ``init_noise_scale`` sets the initial factor to
(init_noise_scale/sqrt(d))·I so early noise is a modest fraction of
unit-norm embedding scale.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InsufficientDataError,
    TrainingDivergedError,
    ValidationError,
)
from .gapmap import MappingModule, _as_f64, _lmap_value_and_grads, map_forward_f64
from .gauss import GaussianParams, load_params, save_params
from .revmap import (
    ReverseMapping,
    contrastive_loss,
    cosine_loss,
    disti_loss,
    init_revmap,
    load_revmap,
    revmap_backward,
    revmap_forward_cached,
    save_revmap,
)
from .rng import SeededRng

logger = logging.getLogger(__name__)

_INIT_SEED_XOR = 0x9E3779B97F4A7C15  # decorrelates weight init from the batch stream

HISTORY_COLUMNS = ("step", "loss_map", "loss_cosine", "loss_cl", "loss_disti", "lr")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int = 32
    peak_lr: float = 5e-4
    warmup_steps: int = 1250
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    tau: float = 0.1
    disti_temp: float = 1.0
    loss_weights: dict[str, float] = field(
        default_factory=lambda: {"w_map": 1.0, "w_recons": 1.0, "w_disti": 1.0}
    )
    seed: int = 0
    expansion: int = 2
    map_lr_scale: float = 2.0
    init_noise_scale: float = 0.25
    grad_clip: float = 0.0  # global-norm clip per parameter group; 0 disables

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValidationError(f"total_steps must be >= 0, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValidationError(
                f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps} vs {self.total_steps}"
            )
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("peak_lr", "eps", "tau", "disti_temp", "map_lr_scale", "init_noise_scale"):
            if getattr(self, name) <= 0.0:
                raise ValidationError(f"{name} must be positive")
        if self.weight_decay < 0.0 or self.grad_clip < 0.0:
            raise ValidationError("weight_decay and grad_clip must be >= 0")
        betas = tuple(float(b) for b in self.betas)
        if len(betas) != 2 or not all(0.0 <= b < 1.0 for b in betas):
            raise ValidationError(f"betas must be two values in [0, 1), got {self.betas}")
        object.__setattr__(self, "betas", betas)
        weights = dict(self.loss_weights)
        for key in ("w_map", "w_recons", "w_disti"):
            weights.setdefault(key, 1.0)
            if weights[key] < 0.0:
                raise ValidationError(f"loss weight {key} must be >= 0")
        unknown = set(weights) - {"w_map", "w_recons", "w_disti"}
        if unknown:
            raise ValidationError(f"unknown loss weights: {sorted(unknown)}")
        object.__setattr__(self, "loss_weights", weights)
        if self.expansion < 1:
            raise ValidationError(f"expansion must be >= 1, got {self.expansion}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError(f"seed must fit in 64 bits, got {self.seed}")


_CONFIG_KEYS = {
    "total_steps", "batch_size", "peak_lr", "warmup_steps", "weight_decay",
    "betas", "eps", "tau", "disti_temp", "loss_weights", "seed", "expansion",
    "map_lr_scale", "init_noise_scale", "grad_clip",
}


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a config from UTF-8 JSON; unknown keys are rejected loudly."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    unknown = set(payload) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {sorted(unknown)}")
    if "total_steps" not in payload:
        raise ValidationError(f"{path}: total_steps is required")
    if "betas" in payload:
        payload["betas"] = tuple(payload["betas"])
    return TrainConfig(**payload)


@dataclass(frozen=True)
class HistoryRow:
    step: int
    loss_map: float
    loss_cosine: float
    loss_cl: float
    loss_disti: float
    lr: float


@dataclass
class FittedModel:
    mapping: MappingModule
    reverse: ReverseMapping
    history: list[HistoryRow]
    diagnostics: dict[str, float] = field(default_factory=dict)


def lr_at(step: int, config: TrainConfig) -> float:
    """Warmup-then-linear-decay schedule value at an integer step."""
    if not 0 <= step <= config.total_steps:
        raise ValidationError(
            f"step {step} outside [0, {config.total_steps}]"
        )
    if config.total_steps == 0:
        return 0.0
    if step <= config.warmup_steps:
        if config.warmup_steps == 0:
            return config.peak_lr
        return config.peak_lr * step / config.warmup_steps
    return config.peak_lr * (config.total_steps - step) / (config.total_steps - config.warmup_steps)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Decoupled-weight-decay Adam update over a named parameter group."""
    if set(params) != set(grads):
        raise ValidationError(
            f"param/grad key mismatch: {sorted(params)} vs {sorted(grads)}"
        )
    b1, b2 = config.betas
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for key in sorted(params):
        p, g = params[key], grads[key]
        if p.shape != g.shape:
            raise ValidationError(f"{key}: grad shape {g.shape} != param shape {p.shape}")
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[key] = p * (1.0 - lr * config.weight_decay) - lr * m_hat / (
            np.sqrt(v_hat) + config.eps
        )
        new_m[key] = m
        new_v[key] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def _clip_grads(grads: dict[str, np.ndarray], clip: float) -> dict[str, np.ndarray]:
    if clip <= 0.0:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= clip:
        return grads
    scale = clip / total
    return {k: g * scale for k, g in grads.items()}


def _check_finite(step: int, **losses: float) -> None:
    for term, value in losses.items():
        if not math.isfinite(value):
            raise TrainingDivergedError(f"step {step}: {term} is not finite ({value})")


def _epoch_batches(n: int, batch_size: int, rng: SeededRng):
    """Yield index batches forever: shuffled passes, last partial pass dropped."""
    if n < batch_size:
        raise InsufficientDataError(
            f"corpus of {n} rows cannot fill a batch of {batch_size}"
        )
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]


def _map_group(dim: int, config: TrainConfig) -> dict[str, np.ndarray]:
    scale = config.init_noise_scale / math.sqrt(dim)
    return {
        "mean": np.zeros(dim),
        "strict": np.zeros((dim, dim)),
        "log_diag": np.full(dim, math.log(scale)),
    }


def _chol_of(group: dict[str, np.ndarray]) -> np.ndarray:
    return group["strict"] + np.diag(np.exp(group["log_diag"]))


def _rev_group(module: ReverseMapping) -> dict[str, np.ndarray]:
    return {"w1": module.w1, "b1": module.b1, "w2": module.w2, "b2": module.b2}


def _rev_from_group(dim: int, expansion: int, group: dict[str, np.ndarray]) -> ReverseMapping:
    return ReverseMapping(
        dim=dim, expansion=expansion,
        w1=group["w1"], b1=group["b1"], w2=group["w2"], b2=group["b2"],
    )


def _recons_terms(
    rev_params: dict[str, np.ndarray],
    dim: int,
    config: TrainConfig,
    noisy: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, float, dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Reconstruction losses and gradients for one batch.

    Returns (loss_cos, loss_cl, rev weight grads, d(recons)/d(noisy input),
    reconstructed batch). The returned grads are already weighted by
    w_recons; the raw loss values are not.
    """
    module = _rev_from_group(dim, config.expansion, rev_params)
    recon, cache = revmap_forward_cached(noisy, module)
    loss_cos, g_cos = cosine_loss(recon, targets)
    loss_cl, g_cl = contrastive_loss(recon, targets, tau=config.tau)
    w = config.loss_weights["w_recons"]
    upstream = w * (g_cos + g_cl)
    wgrads, dx = revmap_backward(module, cache, upstream)
    return loss_cos, loss_cl, wgrads, dx, recon


def train_fixed_mapping(
    corpus_texts, params: GaussianParams, config: TrainConfig
) -> FittedModel:
    """Train only the reverse map against a frozen noise model."""
    mapping = MappingModule(params=params, trainable=False)
    texts = _as_f64(corpus_texts)
    if texts.ndim != 2 or texts.shape[0] < 1:
        raise InsufficientDataError("corpus is empty")
    if texts.shape[1] != params.dim:
        raise ValidationError(
            f"corpus dim {texts.shape[1]} does not match params dim {params.dim}"
        )
    dim = params.dim
    reverse = init_revmap(dim, config.expansion, seed=config.seed ^ _INIT_SEED_XOR)
    rev_params = _rev_group(reverse)
    rev_state = init_adam_state(rev_params)
    rng = SeededRng(config.seed)
    history: list[HistoryRow] = []
    if config.total_steps > 0:
        batches = _epoch_batches(texts.shape[0], config.batch_size, rng)
        for step in range(1, config.total_steps + 1):
            idx = next(batches)
            batch = texts[idx]
            noisy = map_forward_f64(batch, params.mean, params.chol, rng)
            loss_cos, loss_cl, wgrads, _, _ = _recons_terms(
                rev_params, dim, config, noisy, batch
            )
            _check_finite(step, loss_cosine=loss_cos, loss_cl=loss_cl)
            lr = lr_at(step, config)
            rev_params, rev_state = adamw_step(
                rev_params, _clip_grads(wgrads, config.grad_clip), rev_state, lr, config
            )
            history.append(HistoryRow(step, 0.0, loss_cos, loss_cl, 0.0, lr))
    reverse = _rev_from_group(dim, config.expansion, rev_params)
    return FittedModel(mapping=mapping, reverse=reverse, history=history)


def train_setting3(corpus_texts, any_images, config: TrainConfig) -> FittedModel:
    """Fit (mean, L) against cross differences to an unpaired image pool."""
    texts = _as_f64(corpus_texts)
    images = _as_f64(any_images)
    if texts.ndim != 2 or texts.shape[0] < 1:
        raise InsufficientDataError("corpus is empty")
    if images.ndim != 2 or images.shape[0] < 1:
        raise InsufficientDataError("image pool is empty")
    if images.shape[1] != texts.shape[1]:
        raise ValidationError(
            f"image dim {images.shape[1]} does not match text dim {texts.shape[1]}"
        )
    dim = texts.shape[1]
    reverse = init_revmap(dim, config.expansion, seed=config.seed ^ _INIT_SEED_XOR)
    rev_params = _rev_group(reverse)
    rev_state = init_adam_state(rev_params)
    map_params = _map_group(dim, config)
    map_state = init_adam_state(map_params)
    # (mean, L) are distribution parameters; decaying them distorts the fit.
    map_cfg = replace(config, weight_decay=0.0)
    rng = SeededRng(config.seed)
    w_map = config.loss_weights["w_map"]
    history: list[HistoryRow] = []
    min_diag = float(np.exp(map_params["log_diag"]).min())
    for step in range(1, config.total_steps + 1):
        img_idx = rng.integers(0, images.shape[0], config.batch_size)
        txt_idx = rng.integers(0, texts.shape[0], config.batch_size)
        deltas = images[img_idx] - texts[txt_idx]
        mean = map_params["mean"]
        chol = _chol_of(map_params)
        loss_map, g_mean, g_chol, _ = _lmap_value_and_grads(deltas, mean, chol)
        map_grads = {
            "mean": w_map * g_mean,
            "strict": w_map * np.tril(g_chol, k=-1),
            "log_diag": w_map * np.diag(g_chol).copy(),
        }
        # Reconstruction trains the reverse map only; the sampled noise is
        # data here, so the bias fit stays anchored to the KL term.
        batch = texts[txt_idx]
        noisy = map_forward_f64(batch, mean, chol, rng)
        loss_cos, loss_cl, wgrads, _, _ = _recons_terms(rev_params, dim, config, noisy, batch)
        _check_finite(step, loss_map=loss_map, loss_cosine=loss_cos, loss_cl=loss_cl)
        lr = lr_at(step, config)
        map_params, map_state = adamw_step(
            map_params, _clip_grads(map_grads, config.grad_clip),
            map_state, lr * config.map_lr_scale, map_cfg,
        )
        map_params["strict"] = np.tril(map_params["strict"], k=-1)
        rev_params, rev_state = adamw_step(
            rev_params, _clip_grads(wgrads, config.grad_clip), rev_state, lr, config
        )
        history.append(HistoryRow(step, loss_map, loss_cos, loss_cl, 0.0, lr))
        min_diag = min(min_diag, float(np.exp(map_params["log_diag"]).min()))
    fitted = GaussianParams(
        mean=map_params["mean"], chol=_chol_of(map_params), provenance="fitted"
    )
    reverse = _rev_from_group(dim, config.expansion, rev_params)
    return FittedModel(
        mapping=MappingModule(params=fitted, trainable=True),
        reverse=reverse,
        history=history,
        diagnostics={"min_chol_diag": min_diag},
    )


def train_setting4(corpus_texts, config: TrainConfig) -> FittedModel:
    """Text-only training via pseudo differences.

    Per batch: noisy = batch + z Lᵀ + mean (reparameterized sample),
    recon = reverse(noisy), pseudo = noisy − recon. The total loss is
    w_map·KL(pseudo; mean, L) + w_recons·(cosine + contrastive)(recon,
    batch) + w_disti·disti(noisy, batch), and every trainable receives its
    exact gradient — the KL term reaches (mean, L) both as distribution
    parameters and through the sample, and reaches the reverse map through
    the reconstruction. Only the clean texts are detached (teacher side).

    The flow through the sample is what keeps the loop stable: the KL
    term's quadratic part rewards keeping pseudo concentrated, which
    counters the noise inflation that reconstruction error would otherwise
    feed into the fit, while the reconstruction losses keep the reverse map
    from the opposite collapse (recon ≡ noisy, pseudo ≡ 0). Distillation
    adds a direct penalty on noise that disturbs the batch's similarity
    structure.
    """
    texts = _as_f64(corpus_texts)
    if texts.ndim != 2 or texts.shape[0] < 1:
        raise InsufficientDataError("corpus is empty")
    dim = texts.shape[1]
    reverse = init_revmap(dim, config.expansion, seed=config.seed ^ _INIT_SEED_XOR)
    rev_params = _rev_group(reverse)
    rev_state = init_adam_state(rev_params)
    map_params = _map_group(dim, config)
    map_state = init_adam_state(map_params)
    # (mean, L) are distribution parameters; decaying them distorts the fit.
    map_cfg = replace(config, weight_decay=0.0)
    rng = SeededRng(config.seed)
    w_map = config.loss_weights["w_map"]
    w_recons = config.loss_weights["w_recons"]
    w_disti = config.loss_weights["w_disti"]
    history: list[HistoryRow] = []
    min_diag = float(np.exp(map_params["log_diag"]).min())
    if config.total_steps > 0:
        batches = _epoch_batches(texts.shape[0], config.batch_size, rng)
        for step in range(1, config.total_steps + 1):
            idx = next(batches)
            batch = texts[idx]
            mean = map_params["mean"]
            chol = _chol_of(map_params)
            z = rng.normal(batch.shape)
            noisy = batch + z @ chol.T + mean
            module = _rev_from_group(dim, config.expansion, rev_params)
            recon, cache = revmap_forward_cached(noisy, module)
            pseudo = noisy - recon
            loss_map, g_mean_w, g_chol_w, g_deltas = _lmap_value_and_grads(
                pseudo, mean, chol
            )
            loss_cos, g_cos = cosine_loss(recon, batch)
            loss_cl, g_cl = contrastive_loss(recon, batch, tau=config.tau)
            loss_disti, g_disti = disti_loss(noisy, batch, temp=config.disti_temp)
            _check_finite(
                step,
                loss_map=loss_map,
                loss_cosine=loss_cos,
                loss_cl=loss_cl,
                loss_disti=loss_disti,
            )
            # d(total)/d(recon): reconstruction pulls plus the KL term's
            # push through pseudo = noisy − recon.
            up_recon = w_recons * (g_cos + g_cl) - w_map * g_deltas
            wgrads, dx = revmap_backward(module, cache, up_recon)
            # d(total)/d(noisy): KL through pseudo, distillation, and the
            # reverse map's input gradient; then into (mean, L) via
            # noisy = batch + z Lᵀ + mean.
            d_noisy = w_map * g_deltas + w_disti * g_disti + dx
            dL_noise = d_noisy.T @ z
            map_grads = {
                # grad_chol's diagonal is already d/d(log_diag); the sample
                # path is in raw L coordinates, so its diagonal needs the
                # exp factor.
                "mean": w_map * g_mean_w + d_noisy.sum(axis=0),
                "strict": w_map * np.tril(g_chol_w, k=-1) + np.tril(dL_noise, k=-1),
                "log_diag": w_map * np.diag(g_chol_w)
                + np.diag(dL_noise) * np.exp(map_params["log_diag"]),
            }
            lr = lr_at(step, config)
            map_params, map_state = adamw_step(
                map_params, _clip_grads(map_grads, config.grad_clip),
                map_state, lr * config.map_lr_scale, map_cfg,
            )
            map_params["strict"] = np.tril(map_params["strict"], k=-1)
            rev_params, rev_state = adamw_step(
                rev_params, _clip_grads(wgrads, config.grad_clip), rev_state, lr, config
            )
            history.append(HistoryRow(step, loss_map, loss_cos, loss_cl, loss_disti, lr))
            min_diag = min(min_diag, float(np.exp(map_params["log_diag"]).min()))
    fitted = GaussianParams(
        mean=map_params["mean"], chol=_chol_of(map_params), provenance="fitted"
    )
    reverse = _rev_from_group(dim, config.expansion, rev_params)
    return FittedModel(
        mapping=MappingModule(params=fitted, trainable=True),
        reverse=reverse,
        history=history,
        diagnostics={"min_chol_diag": min_diag},
    )


def write_history_csv(history: list[HistoryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(
                [row.step, repr(row.loss_map), repr(row.loss_cosine),
                 repr(row.loss_cl), repr(row.loss_disti), repr(row.lr)]
            )


def read_history_csv(path: str | Path) -> list[HistoryRow]:
    rows: list[HistoryRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(HISTORY_COLUMNS):
            raise FormatError(f"{path}: unexpected history header {header}")
        for rec in reader:
            rows.append(
                HistoryRow(int(rec[0]), float(rec[1]), float(rec[2]),
                           float(rec[3]), float(rec[4]), float(rec[5]))
            )
    return rows


def save_fitted(model: FittedModel, out_dir: str | Path) -> None:
    """Serialize a fitted model as a directory of manifests and blobs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(model.mapping.params, out / "params.json")
    save_revmap(model.reverse, out / "reverse.json")
    write_history_csv(model.history, out / "history.csv")
    manifest = {
        "trainable": model.mapping.trainable,
        "renormalize_after_map": model.mapping.renormalize_after_map,
        "params_path": "params.json",
        "reverse_path": "reverse.json",
        "history_path": "history.csv",
        "diagnostics": model.diagnostics,
    }
    (out / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_fitted(model_dir: str | Path) -> FittedModel:
    """Load a fitted model from its directory (or its model.json path)."""
    out = Path(model_dir)
    if out.is_file():
        manifest_path = out
        out = out.parent
    else:
        manifest_path = out / "model.json"
    if not manifest_path.exists():
        raise FormatError(f"{out}: no model.json found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON: {exc}") from exc
    params = load_params(out / manifest["params_path"])
    reverse = load_revmap(out / manifest["reverse_path"])
    history = read_history_csv(out / manifest["history_path"])
    mapping = MappingModule(
        params=params,
        trainable=bool(manifest.get("trainable", False)),
        renormalize_after_map=bool(manifest.get("renormalize_after_map", False)),
    )
    return FittedModel(
        mapping=mapping,
        reverse=reverse,
        history=history,
        diagnostics=dict(manifest.get("diagnostics", {})),
    )
