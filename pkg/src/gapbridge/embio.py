"""Embedding container and the EMB1 on-disk format.

An EMB1 file is little-endian throughout:

===========  ======  =====================================================
field        width   meaning
===========  ======  =====================================================
magic        4       ASCII ``EMB1`` (the trailing ``1`` is the version)
count        u32     number of rows
dim          u32     row width
flags        u8      bit0 = rows are unit-norm, bit1 = ids section present
payload      var     count*dim float32 values, row-major
ids          var     only if bit1: per row, u32 byte length + UTF-8 bytes
===========  ======  =====================================================

The header is exactly 13 bytes and the total file size is computable from the
header plus id lengths; any byte-length mismatch is rejected as corruption.
A file whose first four bytes are not exactly ``EMB1`` is rejected as an
unrecognized format (wrong magic or unsupported version alike).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateInputError,
    FormatError,
    PairingError,
    ValidationError,
)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIB")
FLAG_NORMALIZED = 0x01
FLAG_IDS = 0x02

# Unit-norm tolerance for the `normalized` flag. One float32 rounding pass
# perturbs a unit row's float64 norm by at most ~6e-8, so 1e-4 accepts every
# legitimately normalized file while catching wrongly flagged ones.
NORM_TOLERANCE = 1e-4

# Rows whose norm is already this close to 1 are returned bit-identical by
# l2_normalize; a single normalization pass always lands inside this band,
# which is what makes the operation exactly idempotent.
_SKIP_BAND = 1e-7


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A (count, dim) float32 matrix with optional row ids.

    ``rows`` is canonicalized to C-contiguous float32 at construction.
    Instances are treated as immutable; share freely across threads.
    """

    rows: np.ndarray
    normalized: bool = False
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValidationError(f"rows must be 2-d, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise ValidationError(f"dim must be positive, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise ValidationError("rows contain NaN or Inf")
        object.__setattr__(self, "rows", rows)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != rows.shape[0]:
                raise ValidationError(
                    f"ids length {len(ids)} does not match row count {rows.shape[0]}"
                )
            object.__setattr__(self, "ids", ids)
        if self.normalized and rows.shape[0] > 0:
            norms = np.linalg.norm(rows.astype(np.float64), axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > NORM_TOLERANCE:
                raise ValidationError(
                    f"normalized flag set but a row norm deviates from 1 by {worst:.3e}"
                )

    @property
    def count(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def as_f64(self) -> np.ndarray:
        """Float64 copy for numeric work; files stay float32."""
        return self.rows.astype(np.float64)


def expected_file_size(count: int, dim: int, id_byte_lengths: list[int] | None = None) -> int:
    """Exact EMB1 byte size for the given shape (and ids, when present)."""
    size = _HEADER.size + 4 * count * dim
    if id_byte_lengths is not None:
        size += sum(4 + n for n in id_byte_lengths)
    return size


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Serialize to EMB1. Output bytes are a pure function of the matrix."""
    flags = 0
    if matrix.normalized:
        flags |= FLAG_NORMALIZED
    if matrix.ids is not None:
        flags |= FLAG_IDS
    blob = bytearray(_HEADER.pack(MAGIC, matrix.count, matrix.dim, flags))
    blob += matrix.rows.astype("<f4").tobytes(order="C")
    if matrix.ids is not None:
        for row_id in matrix.ids:
            encoded = row_id.encode("utf-8")
            blob += struct.pack("<I", len(encoded))
            blob += encoded
    Path(path).write_bytes(bytes(blob))


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Parse an EMB1 file, validating structure, length, and payload."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: {len(data)} bytes is shorter than the 13-byte header")
    magic, count, dim, flags = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic/version {magic!r} (expected {MAGIC!r})")
    if flags & ~(FLAG_NORMALIZED | FLAG_IDS):
        raise FormatError(f"{path}: unknown flag bits 0x{flags:02x}")
    if dim < 1:
        raise FormatError(f"{path}: header declares count={count}, dim={dim}")

    offset = _HEADER.size
    payload_bytes = 4 * count * dim
    if len(data) < offset + payload_bytes:
        raise CorruptionError(
            f"{path}: payload truncated ({len(data) - offset} of {payload_bytes} bytes)"
        )
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    rows = rows.reshape(count, dim).copy()
    offset += payload_bytes

    ids: tuple[str, ...] | None = None
    if flags & FLAG_IDS:
        parsed = []
        for i in range(count):
            if len(data) < offset + 4:
                raise CorruptionError(f"{path}: ids section truncated at entry {i}")
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if len(data) < offset + length:
                raise CorruptionError(f"{path}: id {i} truncated")
            try:
                parsed.append(data[offset : offset + length].decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise CorruptionError(f"{path}: id {i} is not valid UTF-8") from exc
            offset += length
        ids = tuple(parsed)
    if offset != len(data):
        raise CorruptionError(f"{path}: {len(data) - offset} unexpected trailing bytes")

    if not np.isfinite(rows).all():
        raise ValidationError(f"{path}: payload contains NaN or Inf")
    return EmbeddingMatrix(rows=rows, normalized=bool(flags & FLAG_NORMALIZED), ids=ids)


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise unit normalization.

    Norms are computed in float64. Rows already within ``1e-7`` of unit norm
    are passed through bit-identically, which makes the operation exactly
    idempotent (a first pass leaves every row inside that band). A zero-norm
    row is a domain error, reported with its index.
    """
    rows64 = matrix.as_f64()
    norms = np.linalg.norm(rows64, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"row {int(zero[0])} has zero norm")
    keep = np.abs(norms - 1.0) <= _SKIP_BAND
    out = np.where(keep[:, None], rows64, rows64 / norms[:, None])
    result = out.astype(np.float32)
    result[keep] = matrix.rows[keep]  # bit-identical pass-through
    return EmbeddingMatrix(rows=result, normalized=True, ids=matrix.ids)


@dataclass(frozen=True)
class PairManifest:
    """Pointer to two EMB1 files whose rows align by index."""

    image_path: str
    text_path: str
    alignment: str = "by-index"

    def __post_init__(self) -> None:
        if self.alignment != "by-index":
            raise ValidationError(f"unsupported alignment {self.alignment!r}")


def write_pair_manifest(manifest: PairManifest, path: str | Path) -> None:
    payload = {
        "image_path": manifest.image_path,
        "text_path": manifest.text_path,
        "alignment": manifest.alignment,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_pair_manifest(path: str | Path) -> PairManifest:
    """Load a manifest; relative member paths resolve against its directory."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        image_path = payload["image_path"]
        text_path = payload["text_path"]
    except (TypeError, KeyError) as exc:
        raise FormatError(f"{path}: manifest must define image_path and text_path") from exc
    base = path.parent
    return PairManifest(
        image_path=str((base / image_path).resolve()),
        text_path=str((base / text_path).resolve()),
        alignment=payload.get("alignment", "by-index"),
    )


def load_paired(manifest: PairManifest) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Load both sides and enforce row-by-row alignment."""
    images = read_embeddings(manifest.image_path)
    texts = read_embeddings(manifest.text_path)
    if images.count != texts.count:
        raise PairingError(
            f"pair count mismatch: {images.count} images vs {texts.count} texts"
        )
    if images.dim != texts.dim:
        raise PairingError(f"pair dim mismatch: {images.dim} vs {texts.dim}")
    return images, texts
