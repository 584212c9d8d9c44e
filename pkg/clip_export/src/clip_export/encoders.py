"""Caption and image featurizers plus the encoder registry.

The built-in ``lexhash-<dim>`` family needs no downloaded weights and is
fully deterministic: captions become hashed character trigrams (a stable
BLAKE2 hash of each trigram picks the bucket and sign, so identical text
always yields identical rows, across runs and processes), and images
become bilinear 16x16 RGB pixel statistics pushed through a fixed random
projection whose seed is derived from the model id. Both encoders of a
family share one output width, so text and image exports pair up
downstream without shape games.

``hf:<path>`` instead loads a local contrastive text-image checkpoint
through the ``transformers`` library. Nothing is ever downloaded; a
missing checkpoint is a load error.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from hashlib import blake2b
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import EncoderLoadError

logger = logging.getLogger(__name__)

_LEXHASH_PATTERN = re.compile(r"^lexhash-(\d+)$")
_LEXHASH_MIN_DIM = 8
_LEXHASH_MAX_DIM = 4096

# Side of the square pixel grid the image featurizer reduces images to.
_GRID = 16


class TextEncoder(Protocol):
    def encode_batch(self, lines: Sequence[str]) -> np.ndarray: ...


class ImageEncoder(Protocol):
    def encode_batch(self, images: Sequence[Image.Image]) -> np.ndarray: ...


def _stable_hash(data: str) -> int:
    """64-bit hash that is identical across processes and platforms."""
    return int.from_bytes(blake2b(data.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class LexhashTextEncoder:
    """Hashed character-trigram featurizer.

    Each caption is lowercased, its whitespace runs collapsed, and padded
    with one space on each side; every trigram of the result deposits +1
    or -1 (hash-chosen) into a hash-chosen bucket, and the whole line
    deposits one extra feature of its own so no caption maps to the zero
    vector in practice. Counts are squashed with log1p so long captions
    do not dominate purely by length.
    """

    dim: int

    def encode_batch(self, lines: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(lines), self.dim), dtype=np.float64)
        for i, line in enumerate(lines):
            collapsed = " ".join(line.split()).lower()
            padded = f" {collapsed} "
            for j in range(len(padded) - 2):
                h = _stable_hash(padded[j : j + 3])
                out[i, h % self.dim] += 1.0 if (h >> 63) & 1 == 0 else -1.0
            h_line = _stable_hash(padded)
            out[i, h_line % self.dim] += 1.0 if (h_line >> 63) & 1 == 0 else -1.0
        return np.sign(out) * np.log1p(np.abs(out))


@lru_cache(maxsize=8)
def _projection(model_id: str, dim: int) -> np.ndarray:
    """Fixed (raw_features, dim) projection, a pure function of the model id."""
    raw_dim = _GRID * _GRID * 3 + 6
    rng = np.random.default_rng(_stable_hash(model_id))
    return rng.standard_normal((raw_dim, dim)) / np.sqrt(raw_dim)


@dataclass(frozen=True)
class PixelStatsImageEncoder:
    """Pixel-statistics featurizer.

    Images are converted to RGB, bilinearly resized to a 16x16 grid, and
    the centered grid values plus per-channel mean/std are projected to
    the model width with the fixed projection above. Identical pixels in,
    identical row out.
    """

    dim: int
    model_id: str

    def encode_batch(self, images: Sequence[Image.Image]) -> np.ndarray:
        raw = np.stack([self._raw_features(image) for image in images])
        return raw @ _projection(self.model_id, self.dim)

    @staticmethod
    def _raw_features(image: Image.Image) -> np.ndarray:
        grid = image.convert("RGB").resize((_GRID, _GRID), Image.Resampling.BILINEAR)
        pixels = np.asarray(grid, dtype=np.float64) / 255.0
        channels = pixels.reshape(-1, 3)
        return np.concatenate(
            [
                (pixels - 0.5).reshape(-1),
                channels.mean(axis=0) - 0.5,
                channels.std(axis=0),
            ]
        )


@dataclass(frozen=True)
class EncoderPair:
    """Text and image encoders of one model, sharing an output width."""

    model_id: str
    dim: int
    text: TextEncoder
    image: ImageEncoder


def resolve_encoders(model_id: str) -> EncoderPair:
    """Map a model identifier to its encoder pair.

    Supported: ``lexhash-<dim>`` built-ins (no weights needed) and
    ``hf:<local checkpoint dir>`` (loaded via transformers, never
    downloaded). Anything else is an EncoderLoadError.
    """
    match = _LEXHASH_PATTERN.match(model_id)
    if match:
        dim = int(match.group(1))
        if not _LEXHASH_MIN_DIM <= dim <= _LEXHASH_MAX_DIM:
            raise EncoderLoadError(
                f"lexhash width must be in [{_LEXHASH_MIN_DIM}, {_LEXHASH_MAX_DIM}], got {dim}"
            )
        return EncoderPair(
            model_id=model_id,
            dim=dim,
            text=LexhashTextEncoder(dim),
            image=PixelStatsImageEncoder(dim, model_id),
        )
    if model_id.startswith("hf:"):
        return _load_hf_pair(model_id[len("hf:") :])
    raise EncoderLoadError(
        f"unknown model id {model_id!r}; supported: 'lexhash-<dim>' built-ins "
        f"or 'hf:<local checkpoint dir>'"
    )


def _feature_array(result) -> np.ndarray:
    # get_*_features returns a bare tensor on older transformers and a
    # pooled model output on newer ones; both carry the projected features.
    tensor = getattr(result, "pooler_output", result)
    return tensor.double().cpu().numpy()


class _HfTextEncoder:
    def __init__(self, model, processor):
        self._model = model
        self._processor = processor

    def encode_batch(self, lines: Sequence[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            inputs = self._processor(
                text=list(lines), return_tensors="pt", padding=True, truncation=True
            )
            features = self._model.get_text_features(**inputs)
        return _feature_array(features)


class _HfImageEncoder:
    def __init__(self, model, processor):
        self._model = model
        self._processor = processor

    def encode_batch(self, images: Sequence[Image.Image]) -> np.ndarray:
        import torch

        with torch.no_grad():
            inputs = self._processor(images=list(images), return_tensors="pt")
            features = self._model.get_image_features(**inputs)
        return _feature_array(features)


def _load_hf_pair(checkpoint: str) -> EncoderPair:
    try:
        from transformers import AutoModel, AutoProcessor
    except ImportError as exc:
        raise EncoderLoadError(
            f"the 'hf:' backend needs the transformers package: {exc}"
        ) from exc
    if not Path(checkpoint).is_dir():
        raise EncoderLoadError(f"hf checkpoint directory not found: {checkpoint}")
    try:
        model = AutoModel.from_pretrained(checkpoint, local_files_only=True)
        processor = AutoProcessor.from_pretrained(checkpoint, local_files_only=True)
    except Exception as exc:
        raise EncoderLoadError(f"could not load checkpoint {checkpoint}: {exc}") from exc
    dim = getattr(getattr(model, "config", None), "projection_dim", None)
    if not isinstance(dim, int) or dim < 1:
        raise EncoderLoadError(
            f"{checkpoint}: not a contrastive text-image checkpoint "
            f"(no projection_dim in its config)"
        )
    model.eval()
    logger.info("loaded hf checkpoint %s (dim=%d)", checkpoint, dim)
    return EncoderPair(
        model_id=f"hf:{checkpoint}",
        dim=dim,
        text=_HfTextEncoder(model, processor),
        image=_HfImageEncoder(model, processor),
    )
