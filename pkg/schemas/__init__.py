"""Schemas package: errors, network descriptions, run configuration, settings."""
from .errors import (
    InvertKitError,
    UsageError,
    InputValidationError,
    ConfigurationError,
    DimensionError,
    StateError,
    KeypointParseError,
    DatasetError,
    MetricError,
    PerturbationError,
    CheckpointLoadError,
    NumericalError,
    DivergenceError
)
from .network_schemas import (
    OpKind,
    LayerSpec,
    NetworkSpec,
    EncoderSpec,
    INPUT_NAME,
    padding_for_kernel
)
from .run_schemas import (
    TrainingMode,
    LrDecay,
    DatasetConfig,
    TrainConfig,
    FeatureConfig,
    NetworkConfig,
    RunConfig,
    PerturbationKind,
    PerturbationSpec
)
from .settings import InvertKitSettings, get_settings

__all__ = [
    "InvertKitError",
    "UsageError",
    "InputValidationError",
    "ConfigurationError",
    "DimensionError",
    "StateError",
    "KeypointParseError",
    "DatasetError",
    "MetricError",
    "PerturbationError",
    "CheckpointLoadError",
    "NumericalError",
    "DivergenceError",
    "OpKind",
    "LayerSpec",
    "NetworkSpec",
    "EncoderSpec",
    "INPUT_NAME",
    "padding_for_kernel",
    "TrainingMode",
    "LrDecay",
    "DatasetConfig",
    "TrainConfig",
    "FeatureConfig",
    "NetworkConfig",
    "RunConfig",
    "PerturbationKind",
    "PerturbationSpec",
    "InvertKitSettings",
    "get_settings"
]
