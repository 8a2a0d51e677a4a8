"""Deterministic pseudo-label engineering engine for concealed object segmentation.

Subpackage map:

* :mod:`seelab.raster` — masks, boxes, pixel trichotomy, MSKF files
* :mod:`seelab.augment` — weak-augmentation algebra and mask fusion
* :mod:`seelab.entropy` — uncertainty maps and scalar metrics
* :mod:`seelab.prompts` — multi-density prompt extraction
* :mod:`seelab.oracle` — synthetic and subprocess segmenter backends
* :mod:`seelab.pool` — top-B best-ever pseudo-label pool
* :mod:`seelab.supervise` — selection, weighting, losses, EMA
* :mod:`seelab.hgfg` — feature-grouping numeric kernel (forward + backward)
* :mod:`seelab.pipeline` — epoch driver and evaluation
* :mod:`seelab.cli` — ``see`` command line tool
"""

from .raster import Box, GrayMask, SparseAnnotation, load_mask, save_mask
from .augment import AugSpec, apply_spec, fuse, invert_spec, sample_augs
from .entropy import UncertaintyScores, entropy_map, u_abs, u_diff, u_rel
from .prompts import PromptSet, extract_prompts
from .oracle import (
    SubprocessSegmenter,
    SyntheticOracleConfig,
    SyntheticSegmenter,
    coarse_fused_mask,
    generate_pseudo_label,
)
from .pool import LabelPool, PoolEntry, dominates, score_candidate, snapshot, update_pool
from .supervise import (
    ParamVector,
    SelectionThresholds,
    ce_loss,
    ema_update,
    iou_loss,
    loss_semi,
    loss_weak,
    partial_ce,
    select,
    weight_map,
)
from .pipeline import DatasetItem, EpochState, PipelineConfig, evaluate, run_epoch, run_simulation

__version__ = "0.1.0"

__all__ = [
    "AugSpec",
    "Box",
    "DatasetItem",
    "EpochState",
    "GrayMask",
    "LabelPool",
    "ParamVector",
    "PipelineConfig",
    "PoolEntry",
    "PromptSet",
    "SelectionThresholds",
    "SparseAnnotation",
    "SubprocessSegmenter",
    "SyntheticOracleConfig",
    "SyntheticSegmenter",
    "UncertaintyScores",
    "apply_spec",
    "ce_loss",
    "coarse_fused_mask",
    "dominates",
    "ema_update",
    "entropy_map",
    "evaluate",
    "extract_prompts",
    "fuse",
    "generate_pseudo_label",
    "invert_spec",
    "iou_loss",
    "load_mask",
    "loss_semi",
    "loss_weak",
    "partial_ce",
    "run_epoch",
    "run_simulation",
    "sample_augs",
    "save_mask",
    "score_candidate",
    "select",
    "snapshot",
    "u_abs",
    "u_diff",
    "u_rel",
    "update_pool",
    "weight_map",
]
