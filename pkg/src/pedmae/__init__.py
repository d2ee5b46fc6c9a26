"""Cross-region masked-image pre-training for pedestrian representation
learning, with dual pixel/feature prediction heads and a retrieval probe."""

from .backbone import (
    EncoderConfig,
    ViTEncoder,
    position_embedding,
    sincos_embed_2d,
    vit_base,
    vit_small,
    vit_tiny_test,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config_text
from .data import (
    DatasetManifest,
    ImageRecord,
    augment_global,
    generate_synthetic_person,
    load_image,
    load_image_folder,
    resize_bilinear,
    sample_rng,
    save_image,
)
from .evaluation import (
    FeatureMatrix,
    RetrievalReport,
    compute_cmc_map,
    extract_features,
    format_report,
    load_feature_matrix,
    save_feature_matrix,
)
from .masking import (
    MaskLayout,
    block_wise_mask,
    layout_to_text,
    make_mask,
    merge_tokens,
    random_mask,
    split_visible,
)
from .model import (
    DecoderConfig,
    LossBreakdown,
    PredictionDecoder,
    PretrainModel,
    ema_target,
    ema_update,
    forward_pretrain,
    gamma_schedule,
    normalize_patch_targets,
    pixel_loss,
    smooth_l1,
)
from .regions import (
    RegionPair,
    TokenSequence,
    patchify,
    relation_coords,
    sample_cross_region,
    unpatchify,
)
from .trainer import (
    NonFiniteLossError,
    TrainConfig,
    TrainState,
    init_state,
    load_train_checkpoint,
    lr_at,
    save_train_checkpoint,
    split_decay_param_groups,
    train_loop,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "ViTEncoder", "position_embedding", "sincos_embed_2d",
    "vit_base", "vit_small", "vit_tiny_test",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ConfigError", "RunConfig", "load_config", "parse_config_text",
    "DatasetManifest", "ImageRecord", "augment_global",
    "generate_synthetic_person", "load_image", "load_image_folder",
    "resize_bilinear", "sample_rng", "save_image",
    "FeatureMatrix", "RetrievalReport", "compute_cmc_map", "extract_features",
    "format_report",
    "load_feature_matrix", "save_feature_matrix",
    "MaskLayout", "block_wise_mask", "layout_to_text", "make_mask",
    "merge_tokens", "random_mask", "split_visible",
    "DecoderConfig", "LossBreakdown", "PredictionDecoder", "PretrainModel",
    "ema_target", "ema_update", "forward_pretrain", "gamma_schedule",
    "normalize_patch_targets", "pixel_loss", "smooth_l1",
    "RegionPair", "TokenSequence", "patchify", "relation_coords",
    "sample_cross_region", "unpatchify",
    "NonFiniteLossError", "TrainConfig", "TrainState", "init_state",
    "load_train_checkpoint", "lr_at", "save_train_checkpoint",
    "split_decay_param_groups", "train_loop", "train_step",
]
