"""Modality-gap modelling for paired embedding spaces.

The package estimates the offset between two embedding distributions
(e.g. image and text encoders that share a space but not a center),
models it as a learned Gaussian, and trains a small reverse map that
pulls noisy/one-sided embeddings back onto the paired manifold.
"""

from __future__ import annotations

from .embio import (
    EmbeddingMatrix,
    PairManifest,
    l2_normalize,
    load_paired,
    read_embeddings,
    read_pair_manifest,
    write_embeddings,
    write_pair_manifest,
)
from .errors import (
    CorruptionError,
    DegenerateInputError,
    FormatError,
    GapBridgeError,
    InsufficientDataError,
    NotPositiveDefiniteError,
    PairingError,
    TrainingDivergedError,
    UsageError,
    ValidationError,
)
from .evalmetrics import EvalReport, build_eval_report, retrieval_accuracy
from .gapmap import (
    BiasBatch,
    MappingModule,
    estimate_setting1,
    estimate_setting2,
    lmap_loss,
    map_forward,
)
from .gauss import (
    GaussianParams,
    JitterPolicy,
    cholesky_with_jitter,
    estimate_moments,
    kl_to_standard,
    load_params,
    sample_noise,
    save_params,
    whiten,
)
from .prompts import (
    NounLexicon,
    PromptRecord,
    build_full_prompt,
    extract_candidates,
    load_lexicon,
    stage2_prompt_or_padding,
)
from .revmap import (
    ReverseMapping,
    contrastive_loss,
    cosine_loss,
    disti_loss,
    init_revmap,
    load_revmap,
    revmap_forward,
    save_revmap,
)
from .rng import SeededRng
from .synth import SynthSpec, gen_bias_truth, gen_paired_images, gen_text_embeddings
from .trainer import (
    FittedModel,
    TrainConfig,
    load_fitted,
    load_train_config,
    lr_at,
    save_fitted,
    train_fixed_mapping,
    train_setting3,
    train_setting4,
)

__version__ = "0.1.0"

__all__ = [
    "BiasBatch",
    "CorruptionError",
    "DegenerateInputError",
    "EmbeddingMatrix",
    "EvalReport",
    "FittedModel",
    "FormatError",
    "GapBridgeError",
    "GaussianParams",
    "InsufficientDataError",
    "JitterPolicy",
    "MappingModule",
    "NotPositiveDefiniteError",
    "NounLexicon",
    "PairManifest",
    "PairingError",
    "PromptRecord",
    "ReverseMapping",
    "SeededRng",
    "SynthSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "UsageError",
    "ValidationError",
    "build_eval_report",
    "build_full_prompt",
    "cholesky_with_jitter",
    "contrastive_loss",
    "cosine_loss",
    "disti_loss",
    "estimate_moments",
    "estimate_setting1",
    "estimate_setting2",
    "extract_candidates",
    "gen_bias_truth",
    "gen_paired_images",
    "gen_text_embeddings",
    "init_revmap",
    "kl_to_standard",
    "l2_normalize",
    "lmap_loss",
    "load_fitted",
    "load_lexicon",
    "load_paired",
    "load_params",
    "load_revmap",
    "load_train_config",
    "lr_at",
    "map_forward",
    "read_embeddings",
    "read_pair_manifest",
    "retrieval_accuracy",
    "revmap_forward",
    "sample_noise",
    "save_fitted",
    "save_params",
    "save_revmap",
    "stage2_prompt_or_padding",
    "train_fixed_mapping",
    "train_setting3",
    "train_setting4",
    "whiten",
    "write_embeddings",
    "write_pair_manifest",
]
