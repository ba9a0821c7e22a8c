"""Run configuration schemas using Pydantic."""
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TrainingMode(str, Enum):
    FIXED_ENCODER = "fixed_encoder"
    AUTOENCODER = "autoencoder"


class LrDecay(BaseModel):
    """Multiply the learning rate by ``factor`` once ``at`` of training has elapsed."""
    model_config = ConfigDict(extra="forbid")

    at: float = Field(..., gt=0.0, le=1.0, description="Fraction of total steps")
    factor: float = Field(..., gt=0.0, description="Multiplicative learning rate factor")


class DatasetConfig(BaseModel):
    """Where images come from and how they are split."""
    model_config = ConfigDict(extra="forbid")

    image_dir: Path = Field(..., description="Directory of PNG/PPM/JPEG images, optionally one sub-directory per class")
    target_size: Tuple[int, int] = Field((64, 64), description="(W, H) images are resized to")
    split: float = Field(0.8, gt=0.0, lt=1.0, description="Fraction of images used for training")
    seed: int = Field(0, description="Seed of the deterministic split")
    grayscale_features: bool = Field(True, description="Extract shallow features from the grayscale image")
    max_images: Optional[int] = Field(None, ge=4, description="Cap on the number of images read")


class TrainConfig(BaseModel):
    """Adam and schedule hyper-parameters."""
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-3, gt=0.0, description="Initial learning rate")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    batch: int = Field(16, ge=1, description="Mini-batch size")
    steps: int = Field(2000, ge=1, description="Total optimizer steps")
    epochs: Optional[int] = Field(None, ge=1, description="If set, overrides steps with epochs * ceil(N / batch)")
    lr_decay_schedule: List[LrDecay] = Field(
        default_factory=lambda: [LrDecay(at=0.6, factor=0.3), LrDecay(at=0.85, factor=0.3)]
    )
    mode: TrainingMode = Field(TrainingMode.FIXED_ENCODER, description="Freeze or fine-tune the encoder")
    divergence_factor: float = Field(1e3, gt=1.0, description="Abort once loss exceeds this multiple of the initial loss")
    workers: int = Field(1, ge=1, description="Gradient shards per mini-batch")
    log_every: int = Field(100, ge=1)
    eval_every: int = Field(500, ge=1, description="Steps between test-set normalized error evaluations")

    def total_steps(self, num_samples: int) -> int:
        if self.epochs is None:
            return self.steps
        return self.epochs * -(-num_samples // self.batch)

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for 0-based ``step`` of ``total``."""
        lr = self.lr
        for decay in self.lr_decay_schedule:
            if step >= decay.at * total:
                lr *= decay.factor
        return lr


ExtractorName = Literal["hog", "lbp", "sift_grid", "encoder_layer"]
ArchitectureName = Literal["hog", "lbp", "sift", "conv", "fc"]

DEFAULT_CELLS = {"hog": 8, "lbp": 16, "sift_grid": 4}


class FeatureConfig(BaseModel):
    """Which representation gets inverted."""
    model_config = ConfigDict(extra="forbid")

    extractor: ExtractorName = Field("hog", description="Feature representation to invert")
    cell: Optional[int] = Field(None, ge=1, description="Cell size (hog 8, lbp 16, sift grid d 4)")
    tap: str = Field("conv5", description="Encoder tap for encoder_layer features")
    encoder_checkpoint: Optional[Path] = Field(None, description="Trained toy encoder checkpoint")
    keypoint_dir: Optional[Path] = Field(None, description="External keypoint files replacing the detector")

    def resolved_cell(self) -> int:
        if self.cell is not None:
            return self.cell
        return DEFAULT_CELLS.get(self.extractor, 1)


class NetworkConfig(BaseModel):
    """Decoder architecture choice."""
    model_config = ConfigDict(extra="forbid")

    architecture: Optional[ArchitectureName] = Field(None, description="Defaults to the extractor's table")
    width: float = Field(1.0, gt=0.0, description="Multiplier on hidden channel counts")


class RunConfig(BaseModel):
    """Everything a CLI command needs; written next to every output."""
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[DatasetConfig] = None
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: Path = Field(Path("runs/latest"), description="Directory receiving all artifacts")
    seed: int = Field(0, description="Seed for weights, batches and random perturbations")
    montage_every: int = Field(500, ge=1, description="Steps between sample reconstruction montages")


class PerturbationKind(str, Enum):
    BINARIZE = "binarize"
    DROPOUT_RANDOM = "dropout_random"
    DROP_LEAST_THEN_BINARIZE = "drop_least_then_binarize"
    KEEP_TOP_K = "keep_top_k"
    ZERO_TOP_K = "zero_top_k"


class PerturbationSpec(BaseModel):
    """One feature perturbation and its parameters."""
    model_config = ConfigDict(extra="forbid")

    kind: PerturbationKind
    fraction: Optional[float] = Field(None, ge=0.0, le=1.0)
    k: Optional[int] = Field(None, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_parameters(self) -> "PerturbationSpec":
        uses_fraction = self.kind in (
            PerturbationKind.DROPOUT_RANDOM, PerturbationKind.DROP_LEAST_THEN_BINARIZE
        )
        uses_k = self.kind in (PerturbationKind.KEEP_TOP_K, PerturbationKind.ZERO_TOP_K)
        if self.fraction is not None and not uses_fraction:
            raise ValueError(f"fraction does not apply to {self.kind.value}")
        if self.k is not None and not uses_k:
            raise ValueError(f"k does not apply to {self.kind.value}")
        if uses_fraction and self.fraction is None:
            self.fraction = 0.5
        if uses_k and self.k is None:
            self.k = 5
        return self
