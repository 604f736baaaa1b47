"""Whole-slide tiling, Otsu content filtering, two-stage clot-origin
classification, and weighted-log-loss evaluation."""

__version__ = "0.1.0"

from .augment import AugmentationConfig, augment_pipeline
from .classifier import (
    STAGE1_CLASSES,
    STAGE2_CLASSES,
    LinearModel,
    aggregate_slide,
    load_external_scores,
    predict_proba,
)
from .config import RunConfig
from .features import FEATURE_NAMES, extract_features
from .metrics import EvalBatch, confusion, evaluate, split_dataset, wmcll
from .otsu_filter import (
    GrayHistogram,
    apply_content_filter,
    content_ratio,
    otsu_threshold,
    to_grayscale,
)
from .slide_io import MaskImage, SlideImage, open_mask, open_slide
from .synthetic import SyntheticSlideConfig, generate_synthetic_slide
from .tiler import TileRecord, TileSpec, extract_tiles, plan_tiles
from .trainer import TrainConfig, adamw_step, compute_loss_and_grads, random_search, train

__all__ = [
    "AugmentationConfig",
    "EvalBatch",
    "FEATURE_NAMES",
    "GrayHistogram",
    "LinearModel",
    "MaskImage",
    "RunConfig",
    "STAGE1_CLASSES",
    "STAGE2_CLASSES",
    "SlideImage",
    "SyntheticSlideConfig",
    "TileRecord",
    "TileSpec",
    "TrainConfig",
    "adamw_step",
    "aggregate_slide",
    "apply_content_filter",
    "augment_pipeline",
    "compute_loss_and_grads",
    "confusion",
    "content_ratio",
    "evaluate",
    "extract_features",
    "extract_tiles",
    "generate_synthetic_slide",
    "load_external_scores",
    "open_mask",
    "open_slide",
    "otsu_threshold",
    "plan_tiles",
    "predict_proba",
    "random_search",
    "split_dataset",
    "to_grayscale",
    "train",
    "wmcll",
]
