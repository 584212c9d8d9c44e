"""Writer for the EMB1 embedding container.

Layout, all integers little-endian: magic bytes ``EMB1``, count u32,
dim u32, flags u8 (bit 0 = rows are unit-normalized, bit 1 = per-row ids
present); then count*dim float32 row-major; then, when bit 1 is set,
count entries of (u32 byte length, UTF-8 bytes).

This is an independent implementation of the container, written only
from the byte layout above, so files produced here exercise the
consuming toolkit's reader as a genuine cross-check rather than a
same-library round-trip.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIB")
FLAG_NORMALIZED = 0x01
FLAG_IDS = 0x02


def write_emb1(
    path: str | Path,
    rows: np.ndarray,
    *,
    normalized: bool = False,
    ids: Sequence[str] | None = None,
) -> None:
    """Serialize a (count, dim) float32 matrix; bytes are a pure function of the inputs."""
    arr = np.ascontiguousarray(rows, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"rows must have shape (count, dim >= 1), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("rows contain NaN or Inf")
    count, dim = arr.shape
    flags = 0
    if normalized:
        flags |= FLAG_NORMALIZED
    encoded_ids: list[bytes] | None = None
    if ids is not None:
        encoded_ids = [str(row_id).encode("utf-8") for row_id in ids]
        if len(encoded_ids) != count:
            raise ValueError(f"ids length {len(encoded_ids)} != row count {count}")
        flags |= FLAG_IDS
    blob = bytearray(_HEADER.pack(MAGIC, count, dim, flags))
    blob += arr.astype("<f4").tobytes(order="C")
    if encoded_ids is not None:
        for encoded in encoded_ids:
            blob += struct.pack("<I", len(encoded))
            blob += encoded
    Path(path).write_bytes(bytes(blob))
