"""clip-export: caption/image embedding exporter emitting EMB1 files.

Deterministic built-in featurizers (``lexhash-<dim>``) or a local
contrastive checkpoint (``hf:<dir>``) turn caption files and image
directories into EMB1 embedding matrices, and COCO-style annotation JSON
into caption and noun-lexicon text files, ready for the downstream
gap-estimation toolkit.
"""

from .cocoio import COCO_80, build_lexicon, pluralize
from .emb1 import write_emb1
from .encoders import EncoderPair, resolve_encoders
from .errors import EncoderLoadError, ExportError, InputError, UsageError
from .exporter import (
    CocoResult,
    ExportJob,
    ExportResult,
    export_coco_captions,
    export_image_embeddings,
    export_text_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "COCO_80",
    "CocoResult",
    "EncoderLoadError",
    "EncoderPair",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "InputError",
    "UsageError",
    "build_lexicon",
    "export_coco_captions",
    "export_image_embeddings",
    "export_text_embeddings",
    "pluralize",
    "resolve_encoders",
    "write_emb1",
    "__version__",
]
