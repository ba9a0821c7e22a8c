"""Services package initialization."""
from .feature_extractors import hog_extract, lbp_extract, to_grayscale
from .sift_features import SiftDetector, sift_detect_describe, sift_grid_encode
from .network_builder import (
    build_conv_inversion_net,
    build_fc_inversion_net,
    build_hog_net,
    build_lbp_net,
    build_network,
    build_sift_net,
    build_toy_encoder,
    init_weights
)
from .dataset_service import ImageSet, load_dataset
from .inversion_pipeline import (
    EncoderFeatureSource,
    InversionModel,
    ShallowFeatureSource,
    build_inversion_model,
    model_from_checkpoint
)
from .trainer import EncoderTrainer, InversionTrainer, TrainResult, adam_step
from .evaluation import normalized_error, pairwise_normalizer
from .analysis_service import (
    activate_single_unit,
    binarize,
    drop_least_then_binarize,
    dropout_random,
    fit_distribution,
    interpolate,
    keep_top_k,
    sample_features,
    zero_top_k
)

__all__ = [
    "hog_extract",
    "lbp_extract",
    "to_grayscale",
    "SiftDetector",
    "sift_detect_describe",
    "sift_grid_encode",
    "build_conv_inversion_net",
    "build_fc_inversion_net",
    "build_hog_net",
    "build_lbp_net",
    "build_network",
    "build_sift_net",
    "build_toy_encoder",
    "init_weights",
    "ImageSet",
    "load_dataset",
    "EncoderFeatureSource",
    "InversionModel",
    "ShallowFeatureSource",
    "build_inversion_model",
    "model_from_checkpoint",
    "EncoderTrainer",
    "InversionTrainer",
    "TrainResult",
    "adam_step",
    "normalized_error",
    "pairwise_normalizer",
    "activate_single_unit",
    "binarize",
    "drop_least_then_binarize",
    "dropout_random",
    "fit_distribution",
    "interpolate",
    "keep_top_k",
    "sample_features",
    "zero_top_k"
]
