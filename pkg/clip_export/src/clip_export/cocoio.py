"""COCO caption-annotation parsing and the object-noun lexicon.

Two annotation layouts are recognized:

* standard caption files — a JSON object with an ``annotations`` list of
  ``{"image_id", "id", "caption"}`` records (the file itself is one
  split, so split names are ignored);
* consolidated split files — a JSON object whose ``images`` entries
  carry ``split`` and ``sentences`` fields; captions are taken from the
  requested split, with ``restval`` folded into ``train``.

The lexicon is the dataset's category names, lowercased, plus a naive
plural for each; caption files that carry no ``categories`` block (the
usual case for caption-only annotations) fall back to the standard
80-class object list.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .errors import InputError

logger = logging.getLogger(__name__)

# The 80 object classes of the common detection label set, in canonical order.
COCO_80 = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv",
    "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)


def pluralize(noun: str) -> str:
    """Naive English plural of the last word of a phrase."""
    head, sep, word = noun.rpartition(" ")
    if word.endswith(("s", "x", "z", "ch", "sh")):
        plural = word + "es"
    elif word.endswith("y") and len(word) > 1 and word[-2] not in "aeiou":
        plural = word[:-1] + "ies"
    else:
        plural = word + "s"
    return head + sep + plural


def build_lexicon(categories: list[str] | None) -> list[str]:
    """Sorted, deduplicated lexicon: lowercased names plus naive plurals."""
    names = [c.strip().lower() for c in (categories or COCO_80) if c.strip()]
    return sorted(set(names) | {pluralize(name) for name in names})


def load_annotations(path: str | Path) -> dict:
    """Load an annotation JSON object, rejecting anything malformed."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return doc


def detect_format(doc: dict) -> str:
    """Return ``"standard"`` or ``"split"`` for a loaded annotation object."""
    annotations = doc.get("annotations")
    if isinstance(annotations, list) and (
        not annotations or isinstance(annotations[0], dict) and "caption" in annotations[0]
    ):
        return "standard"
    images = doc.get("images")
    if isinstance(images, list) and images and isinstance(images[0], dict) and "sentences" in images[0]:
        return "split"
    raise InputError(
        "unrecognized annotation layout: expected either an 'annotations' list "
        "with caption records or an 'images' list with per-image sentences"
    )


def _clean_caption(text: object, where: str) -> str | None:
    if not isinstance(text, str):
        raise InputError(f"{where}: caption is not a string")
    collapsed = " ".join(text.split())
    if not collapsed:
        logger.warning("%s: dropping empty caption", where)
        return None
    return collapsed


def extract_captions(doc: dict, split: str) -> list[str]:
    """Captions of the requested split, one cleaned string per caption.

    Standard files are one split already, so every annotation is taken
    (ordered by image id, then annotation id, regardless of file order).
    Split files filter on each image's ``split`` field; requesting
    ``train`` also admits ``restval``.
    """
    if detect_format(doc) == "standard":
        records = []
        for index, ann in enumerate(doc["annotations"]):
            if not isinstance(ann, dict) or "caption" not in ann:
                raise InputError(f"annotation #{index}: no caption field")
            cleaned = _clean_caption(ann["caption"], f"annotation #{index}")
            if cleaned is None:
                continue
            records.append((ann.get("image_id", 0), ann.get("id", index), cleaned))
        records.sort(key=lambda record: (record[0], record[1]))
        return [caption for _, _, caption in records]

    wanted = {split, "restval"} if split == "train" else {split}
    captions = []
    for index, image in enumerate(doc["images"]):
        if not isinstance(image, dict):
            raise InputError(f"image #{index}: not an object")
        if image.get("split") not in wanted:
            continue
        sentences = image.get("sentences")
        if not isinstance(sentences, list):
            raise InputError(f"image #{index}: no sentences list")
        for s_index, sentence in enumerate(sentences):
            if not isinstance(sentence, dict) or "raw" not in sentence:
                raise InputError(f"image #{index} sentence #{s_index}: no raw field")
            cleaned = _clean_caption(sentence["raw"], f"image #{index} sentence #{s_index}")
            if cleaned is not None:
                captions.append(cleaned)
    return captions


def extract_categories(doc: dict) -> list[str] | None:
    """Category names carried by the file, or None when absent."""
    categories = doc.get("categories")
    if not categories:
        return None
    if not isinstance(categories, list):
        raise InputError("categories must be a list")
    names = []
    for index, category in enumerate(categories):
        if not isinstance(category, dict) or not str(category.get("name", "")).strip():
            raise InputError(f"category #{index}: no name field")
        names.append(str(category["name"]))
    return names
