"""Feature-side schemas: feature maps, keypoint sets and fitted feature distributions."""
from typing import Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from engine.tensor import Tensor
from schemas.errors import DimensionError, InputValidationError

FeatureKind = Literal["hog", "lbp", "sift_grid", "encoder_layer"]

HOG_CHANNELS = 31
LBP_CHANNELS = 58
SIFT_DESCRIPTOR_SIZE = 128
SIFT_GRID_CHANNELS = SIFT_DESCRIPTOR_SIZE + 5

_FIXED_CHANNELS = {"hog": HOG_CHANNELS, "lbp": LBP_CHANNELS, "sift_grid": SIFT_GRID_CHANNELS}


def grid_size(length: int, cell: int) -> int:
    return -(-length // cell)


class FeatureMap(BaseModel):
    """A feature tensor plus where it came from."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tensor: Tensor = Field(..., description="(1, C, H', W') feature values")
    extractor: FeatureKind = Field(..., description="Extractor that produced the tensor")
    cell: int = Field(..., ge=1, description="Cell size in pixels (1 for encoder taps)")
    source_size: Tuple[int, int] = Field(..., description="(W, H) of the source image")
    tap: Optional[str] = Field(None, description="Encoder tap for encoder_layer features")

    @model_validator(mode="after")
    def _check_layout(self) -> "FeatureMap":
        expected = _FIXED_CHANNELS.get(self.extractor)
        if expected is None:
            return self
        _, channels, height, width = self.tensor.shape
        if channels != expected:
            raise DimensionError("channels", f"{self.extractor} map has {channels} channels, expected {expected}")
        source_w, source_h = self.source_size
        if height != grid_size(source_h, self.cell):
            raise DimensionError("height", f"{height} cells for {source_h} px at cell {self.cell}")
        if width != grid_size(source_w, self.cell):
            raise DimensionError("width", f"{width} cells for {source_w} px at cell {self.cell}")
        return self

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.tensor.shape[1:])

    def metadata(self) -> dict:
        return {
            "extractor": self.extractor,
            "cell": self.cell,
            "source_size": list(self.source_size),
            "tap": self.tap,
        }


class KeypointSet(BaseModel):
    """
    Sparse keypoints as parallel arrays.

    ``positions`` holds (x, y) pixel coordinates, ``orientations`` radians in
    [-pi, pi), ``descriptors`` one 128-d row per keypoint.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    positions: np.ndarray = Field(..., description="(N, 2) x, y in pixels")
    scales: np.ndarray = Field(..., description="(N,) scale in pixels")
    orientations: np.ndarray = Field(..., description="(N,) radians")
    descriptors: np.ndarray = Field(..., description="(N, 128) non-negative descriptor rows")

    @model_validator(mode="after")
    def _check_arrays(self) -> "KeypointSet":
        count = self.positions.shape[0]
        if self.positions.shape != (count, 2):
            raise DimensionError("positions", f"expected (N, 2), got {self.positions.shape}")
        if self.scales.shape != (count,) or self.orientations.shape != (count,):
            raise DimensionError("keypoints", "scales and orientations must have one entry per keypoint")
        if self.descriptors.shape != (count, SIFT_DESCRIPTOR_SIZE):
            raise DimensionError(
                "descriptor", f"expected ({count}, {SIFT_DESCRIPTOR_SIZE}), got {self.descriptors.shape}"
            )
        if count and np.any(self.scales <= 0):
            raise InputValidationError("keypoint scales must be positive")
        return self

    @classmethod
    def empty(cls) -> "KeypointSet":
        return cls(
            positions=np.zeros((0, 2)),
            scales=np.zeros(0),
            orientations=np.zeros(0),
            descriptors=np.zeros((0, SIFT_DESCRIPTOR_SIZE)),
        )

    @classmethod
    def from_records(cls, records: List[Tuple[float, float, float, float, np.ndarray]]) -> "KeypointSet":
        if not records:
            return cls.empty()
        return cls(
            positions=np.array([(r[0], r[1]) for r in records], dtype=np.float64),
            scales=np.array([r[2] for r in records], dtype=np.float64),
            orientations=np.array([r[3] for r in records], dtype=np.float64),
            descriptors=np.stack([np.asarray(r[4], dtype=np.float64) for r in records]),
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    def records(self) -> Iterator[Tuple[float, float, float, float, np.ndarray]]:
        for i in range(len(self)):
            x, y = self.positions[i]
            yield float(x), float(y), float(self.scales[i]), float(self.orientations[i]), self.descriptors[i]

    def subset(self, indices) -> "KeypointSet":
        indices = np.asarray(indices, dtype=np.int64)
        return KeypointSet(
            positions=self.positions[indices],
            scales=self.scales[indices],
            orientations=self.orientations[indices],
            descriptors=self.descriptors[indices],
        )

    def out_of_bounds(self, image_size: Tuple[int, int]) -> List[int]:
        """Indices of keypoints outside [0, W) x [0, H)."""
        width, height = image_size
        x, y = self.positions[:, 0], self.positions[:, 1]
        bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
        return [int(i) for i in np.flatnonzero(bad)]


class FeatureDistribution(BaseModel):
    """
    Per-dimension model of feature values fitted over a corpus.

    Every dimension keeps an explicit zero mass. Non-zero values follow either
    a per-dimension histogram or one truncated Gaussian shared by all
    dimensions.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mode: Literal["histogram", "trunc_gaussian"] = Field(..., description="Model of the non-zero values")
    feature_shape: Tuple[int, int, int] = Field(..., description="(C, H, W) of one feature vector")
    sample_count: int = Field(..., ge=2, description="Number of fitted feature vectors")
    zero_counts: np.ndarray = Field(..., description="(D,) exact-zero occurrences per dimension")
    bin_edges: Optional[np.ndarray] = Field(None, description="(D, bins + 1) histogram edges")
    counts: Optional[np.ndarray] = Field(None, description="(D, bins) non-zero occurrences per bin")
    mean: Optional[float] = Field(None, description="Truncated Gaussian location")
    std: Optional[float] = Field(None, description="Truncated Gaussian scale")
    lower: float = Field(0.0, description="Truncation point of the Gaussian")

    @model_validator(mode="after")
    def _check_mass(self) -> "FeatureDistribution":
        dims = int(np.prod(self.feature_shape))
        if self.zero_counts.shape != (dims,):
            raise DimensionError("features", f"zero_counts {self.zero_counts.shape} for {dims} dimensions")
        if self.mode == "histogram":
            if self.counts is None or self.bin_edges is None:
                raise InputValidationError("histogram distribution needs bin_edges and counts")
            if self.counts.shape[0] != dims or self.bin_edges.shape != (dims, self.counts.shape[1] + 1):
                raise DimensionError("bins", f"edges {self.bin_edges.shape} vs counts {self.counts.shape}")
            totals = self.counts.sum(axis=1) + self.zero_counts
            if not np.all(totals == self.sample_count):
                raise InputValidationError("histogram counts must sum to the sample count per dimension")
        elif self.mean is None or self.std is None or self.std <= 0:
            raise InputValidationError("trunc_gaussian distribution needs mean and a positive std")
        return self

    @property
    def dimensions(self) -> int:
        return int(self.zero_counts.shape[0])

    @property
    def zero_fraction(self) -> np.ndarray:
        return self.zero_counts / float(self.sample_count)
