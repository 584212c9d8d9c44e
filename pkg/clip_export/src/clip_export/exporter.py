"""Export operations: caption files and image directories to EMB1, and
COCO annotations to caption + lexicon text files.

The exporter never computes statistics over the embeddings it emits; it
only encodes and serializes, leaving all downstream math to the
consuming toolkit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .cocoio import build_lexicon, detect_format, extract_captions, extract_categories, load_annotations
from .emb1 import write_emb1
from .encoders import resolve_encoders
from .errors import InputError, UsageError

logger = logging.getLogger(__name__)

# Appended to the output path to name the sidecar listing skipped files.
SKIPLOG_SUFFIX = ".skiplog.txt"


@dataclass(frozen=True)
class ExportJob:
    """One encoding run: what to encode, with which model, to where."""

    model_id: str
    input: str | Path
    output: str | Path
    normalize: bool = True
    batch: int = 64

    def __post_init__(self) -> None:
        if self.batch < 1:
            raise UsageError(f"batch must be >= 1, got {self.batch}")


@dataclass(frozen=True)
class ExportResult:
    """What an embedding export produced."""

    output: Path
    count: int
    dim: int
    skipped: tuple[str, ...] = field(default=())


def _encode_in_batches(encoder, items, batch: int) -> np.ndarray:
    chunks = [
        encoder.encode_batch(items[start : start + batch])
        for start in range(0, len(items), batch)
    ]
    return np.vstack(chunks)


def _normalized_rows(rows: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    zero = np.flatnonzero(norms.ravel() == 0.0)
    if zero.size:
        raise InputError(f"{label} #{zero[0]} encodes to the zero vector; cannot normalize")
    return rows / norms


def export_text_embeddings(job: ExportJob) -> ExportResult:
    """Encode a UTF-8 captions file, one caption per line.

    Row i is the embedding of line i; ids are 1-based line numbers as
    strings. Blank lines are rejected (they would silently shift the
    line-to-row correspondence); an empty file is an error.
    """
    path = Path(job.input)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text: {exc}") from exc
    if not lines:
        raise InputError(f"{path}: empty captions file")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            raise InputError(f"{path}: line {lineno} is blank")
    pair = resolve_encoders(job.model_id)
    rows = _encode_in_batches(pair.text, lines, job.batch)
    if job.normalize:
        rows = _normalized_rows(rows, "caption line")
    ids = [str(lineno) for lineno in range(1, len(lines) + 1)]
    write_emb1(job.output, rows.astype(np.float32), normalized=job.normalize, ids=ids)
    logger.info("wrote %d text embeddings (dim=%d) to %s", len(lines), pair.dim, job.output)
    return ExportResult(output=Path(job.output), count=len(lines), dim=pair.dim)


def export_image_embeddings(job: ExportJob) -> ExportResult:
    """Encode every decodable image in a directory, in filename order.

    Rows follow lexicographic filename order and ids are the filenames.
    Files Pillow cannot decode are skipped with a warning and listed in a
    ``<output>.skiplog.txt`` sidecar; an empty directory, or one with no
    decodable image at all, is an error.
    """
    directory = Path(job.input)
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    names = sorted(entry.name for entry in directory.iterdir() if entry.is_file())
    if not names:
        raise InputError(f"{directory}: no files in directory")
    images: list[Image.Image] = []
    kept: list[str] = []
    skipped: list[tuple[str, str]] = []
    for name in names:
        try:
            with Image.open(directory / name) as opened:
                images.append(opened.convert("RGB"))
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", name, exc)
            skipped.append((name, str(exc)))
            continue
        kept.append(name)
    if not kept:
        raise InputError(f"{directory}: no decodable images ({len(skipped)} files skipped)")
    pair = resolve_encoders(job.model_id)
    rows = _encode_in_batches(pair.image, images, job.batch)
    if job.normalize:
        rows = _normalized_rows(rows, "image")
    write_emb1(job.output, rows.astype(np.float32), normalized=job.normalize, ids=kept)
    if skipped:
        sidecar = Path(str(job.output) + SKIPLOG_SUFFIX)
        sidecar.write_text(
            "".join(f"{name}\t{reason}\n" for name, reason in skipped), encoding="utf-8"
        )
        logger.warning("%d file(s) skipped; reasons in %s", len(skipped), sidecar)
    logger.info("wrote %d image embeddings (dim=%d) to %s", len(kept), pair.dim, job.output)
    return ExportResult(
        output=Path(job.output),
        count=len(kept),
        dim=pair.dim,
        skipped=tuple(name for name, _ in skipped),
    )


@dataclass(frozen=True)
class CocoResult:
    """What a COCO extraction produced."""

    layout: str
    captions_out: Path
    lexicon_out: Path
    caption_count: int
    lexicon_count: int


def export_coco_captions(
    annotation_path: str | Path,
    split: str,
    captions_out: str | Path,
    lexicon_out: str | Path,
) -> CocoResult:
    """Extract captions (one per line) and the noun lexicon from annotations."""
    doc = load_annotations(annotation_path)
    layout = detect_format(doc)
    captions = extract_captions(doc, split)
    if not captions:
        raise InputError(f"{annotation_path}: no captions for split {split!r}")
    lexicon = build_lexicon(extract_categories(doc))
    Path(captions_out).write_text("".join(line + "\n" for line in captions), encoding="utf-8")
    Path(lexicon_out).write_text("".join(line + "\n" for line in lexicon), encoding="utf-8")
    logger.info(
        "extracted %d captions (%s layout) and %d lexicon entries",
        len(captions), layout, len(lexicon),
    )
    return CocoResult(
        layout=layout,
        captions_out=Path(captions_out),
        lexicon_out=Path(lexicon_out),
        caption_count=len(captions),
        lexicon_count=len(lexicon),
    )
