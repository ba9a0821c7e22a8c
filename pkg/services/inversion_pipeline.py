"""
Feature sources and decoder assembly.

A feature source turns a batch of RGB images into the representation being
inverted: one of the shallow extractors, or a tap of the toy encoder. An
InversionModel pairs a source with a decoder Network and is what checkpoints
are turned back into.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from engine.graph import Network
from engine.tensor import PRODUCTION_DTYPE, Tensor
from schemas.errors import ConfigurationError, DimensionError
from schemas.feature_schemas import (
    HOG_CHANNELS,
    LBP_CHANNELS,
    SIFT_GRID_CHANNELS,
    FeatureMap,
    KeypointSet,
    grid_size,
)
from schemas.network_schemas import EncoderSpec, NetworkSpec
from schemas.run_schemas import FeatureConfig, NetworkConfig
from schemas.settings import get_settings
from storage.checkpoint_store import load_checkpoint
from storage.keypoint_files import load_keypoints
from storage.models import ENCODER_PREFIX, Checkpoint
from utilities.imaging import resize_bilinear
from . import network_builder
from .feature_extractors import hog_extract, lbp_extract, to_grayscale
from .sift_features import SiftDetector, sift_grid_encode

logger = logging.getLogger(__name__)

# images live in [0, 1]; networks see and predict them centered on zero
IMAGE_OFFSET = 0.5
KEYPOINT_SUFFIX = ".key"
DEFAULT_ARCHITECTURES = {"hog": "hog", "lbp": "lbp", "sift_grid": "sift"}


def center(images: np.ndarray) -> np.ndarray:
    return (np.asarray(images, dtype=PRODUCTION_DTYPE) - IMAGE_OFFSET).astype(PRODUCTION_DTYPE)


def uncenter(images: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(images, dtype=np.float32) + IMAGE_OFFSET, 0.0, 1.0)


def keypoint_path(keypoint_dir: Path, name: str) -> Path:
    """``cls/img.png`` -> ``<keypoint_dir>/cls/img.key``."""
    return Path(keypoint_dir) / Path(name).with_suffix(KEYPOINT_SUFFIX)


# ==================== Feature sources ====================

class FeatureSource:
    """Maps (B, 3, H, W) images in [0, 1] to (B, C, h, w) float32 features."""

    extractor: str = ""
    cell: int = 1
    tap: Optional[str] = None
    differentiable: bool = False

    def feature_shape(self, image_size: Tuple[int, int]) -> Tuple[int, int, int]:
        raise NotImplementedError

    def extract(self, images: np.ndarray, names: Optional[Sequence[str]] = None, offset: int = 0) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"extractor": self.extractor, "cell": self.cell, "tap": self.tap}


class ShallowFeatureSource(FeatureSource):
    """
    HOG, LBP or SIFT-grid features of the grayscale image.

    Args:
        extractor: 'hog', 'lbp' or 'sift_grid'
        cell: Cell size (grid size d for sift_grid)
        seed: Seed of the per-image generators picking keypoints in crowded cells
        normalize_lbp: Divide LBP counts by the cell area
        keypoint_dir: Read keypoints from text files instead of detecting them
    """

    _CHANNELS = {"hog": HOG_CHANNELS, "lbp": LBP_CHANNELS, "sift_grid": SIFT_GRID_CHANNELS}

    def __init__(self, extractor: str, cell: int, seed: int = 0, normalize_lbp: bool = True,
                 keypoint_dir: Optional[Path] = None, detector: Optional[SiftDetector] = None):
        if extractor not in self._CHANNELS:
            raise ConfigurationError(f"'{extractor}' is not a shallow extractor")
        self.extractor = extractor
        self.cell = cell
        self.seed = seed
        self.normalize_lbp = normalize_lbp
        self.keypoint_dir = None if keypoint_dir is None else Path(keypoint_dir)
        self.detector = detector or SiftDetector()

    def feature_shape(self, image_size: Tuple[int, int]) -> Tuple[int, int, int]:
        width, height = image_size
        return self._CHANNELS[self.extractor], grid_size(height, self.cell), grid_size(width, self.cell)

    def keypoints(self, gray: np.ndarray, name: Optional[str] = None) -> KeypointSet:
        if self.keypoint_dir is not None:
            if name is None:
                raise ConfigurationError("external keypoints need image names")
            return load_keypoints(keypoint_path(self.keypoint_dir, name))
        return self.detector.detect_and_describe(gray)[0]

    def describe_image(self, image: np.ndarray, index: int = 0,
                       name: Optional[str] = None) -> Tuple[FeatureMap, Optional[KeypointSet]]:
        """
        Features of one (3, H, W) image.

        Returns:
            The FeatureMap and, for sift_grid, the keypoints it was encoded from
        """
        gray = to_grayscale(image[None]).data[0, 0]
        if self.extractor == "hog":
            return hog_extract(gray, self.cell), None
        if self.extractor == "lbp":
            return lbp_extract(gray, self.cell, normalize=self.normalize_lbp), None
        keypoints = self.keypoints(gray, name)
        rng = np.random.default_rng([self.seed, index])
        height, width = gray.shape
        return sift_grid_encode(keypoints, (width, height), self.cell, rng), keypoints

    def extract(self, images: np.ndarray, names: Optional[Sequence[str]] = None, offset: int = 0) -> np.ndarray:
        names = list(names) if names is not None else [None] * len(images)

        def run(index: int) -> np.ndarray:
            fmap, _ = self.describe_image(images[index], offset + index, names[index])
            return fmap.tensor.data[0]

        with ThreadPoolExecutor(max_workers=get_settings().threads) as pool:
            maps = list(pool.map(run, range(len(images))))
        if not maps:
            return np.zeros((0,) + self.feature_shape((images.shape[3], images.shape[2])), PRODUCTION_DTYPE)
        return np.stack(maps).astype(PRODUCTION_DTYPE)

    def describe(self) -> dict:
        info = super().describe()
        info.update(seed=self.seed, normalize_lbp=self.normalize_lbp)
        return info


class EncoderFeatureSource(FeatureSource):
    """Activations of one toy-encoder tap; backpropagates in autoencoder mode."""

    extractor = "encoder_layer"
    differentiable = True

    def __init__(self, encoder: EncoderSpec, network: Network, tap: str):
        if tap not in encoder.taps:
            raise ConfigurationError(f"unknown encoder tap '{tap}', choose from {sorted(encoder.taps)}")
        self.encoder = encoder
        self.network = network
        self.tap = tap
        self.layer = encoder.taps[tap]

    def feature_shape(self, image_size: Tuple[int, int]) -> Tuple[int, int, int]:
        return tuple(self.encoder.tap_shape(self.tap))

    def forward(self, images: np.ndarray) -> np.ndarray:
        """Forward pass keeping caches for a following ``backward``."""
        return self.network.forward(center(images), stop_at=self.layer).data

    def backward(self, grad: np.ndarray) -> None:
        self.network.backward(grad, start_at=self.layer)

    def extract(self, images: np.ndarray, names: Optional[Sequence[str]] = None, offset: int = 0,
                batch: int = 16) -> np.ndarray:
        chunks = [self.forward(images[i:i + batch]).copy() for i in range(0, len(images), batch)]
        if not chunks:
            return np.zeros((0,) + self.feature_shape((0, 0)), PRODUCTION_DTYPE)
        return np.concatenate(chunks)

    def clone(self) -> "EncoderFeatureSource":
        return EncoderFeatureSource(self.encoder, self.network.clone(), self.tap)

    def prefixed_parameters(self) -> Dict[str, Tensor]:
        return {ENCODER_PREFIX + name: t for name, t in self.network.parameters.items()}


def load_encoder(path: Path) -> Tuple[EncoderSpec, Network, Checkpoint]:
    """Toy encoder written by ``train-encoder``."""
    checkpoint = load_checkpoint(path)
    if checkpoint.encoder is None:
        raise ConfigurationError(f"{path} is not an encoder checkpoint")
    params = {name: Tensor(value) for name, value in checkpoint.decoder_parameters().items()}
    return checkpoint.encoder, Network(checkpoint.encoder.network, params), checkpoint


def build_feature_source(cfg: FeatureConfig, seed: int = 0, normalize_lbp: bool = True) -> FeatureSource:
    if cfg.extractor == "encoder_layer":
        if cfg.encoder_checkpoint is None:
            raise ConfigurationError("encoder_layer features need --encoder-checkpoint")
        encoder, network, _ = load_encoder(cfg.encoder_checkpoint)
        return EncoderFeatureSource(encoder, network, cfg.tap)
    return ShallowFeatureSource(cfg.extractor, cfg.resolved_cell(), seed=seed,
                                normalize_lbp=normalize_lbp, keypoint_dir=cfg.keypoint_dir)


# ==================== Decoders ====================

def default_architecture(extractor: str, feature_shape: Tuple[int, int, int]) -> str:
    if extractor in DEFAULT_ARCHITECTURES:
        return DEFAULT_ARCHITECTURES[extractor]
    return "fc" if feature_shape[1:] == (1, 1) else "conv"


def _square(feature_shape: Tuple[int, int, int], architecture: str) -> int:
    _, height, width = feature_shape
    if height != width:
        raise DimensionError("width", f"the {architecture} net needs square feature maps, got {height}x{width}")
    return height


def build_decoder_spec(architecture: str, feature_shape: Tuple[int, int, int],
                       target_size: Tuple[int, int], width: float = 1.0) -> NetworkSpec:
    """
    Decoder NetworkSpec for features of ``feature_shape``.

    Args:
        architecture: hog, lbp, sift, conv or fc
        feature_shape: (C, h, w) of one feature map
        target_size: (W, H) of the images being reconstructed
        width: Channel multiplier
    """
    side = target_size[1]
    if architecture == "hog":
        return network_builder.build_hog_net(_square(feature_shape, architecture), width)
    if architecture == "lbp":
        return network_builder.build_lbp_net(_square(feature_shape, architecture), width)
    if architecture == "sift":
        return network_builder.build_sift_net(_square(feature_shape, architecture), width)
    if architecture == "conv":
        _square(feature_shape, architecture)
        return network_builder.build_conv_inversion_net(tuple(feature_shape), target_size=side, width=width)
    if architecture == "fc":
        count = network_builder.upconv_count(4, side)
        return network_builder.build_fc_inversion_net(int(np.prod(feature_shape)), count, width)
    raise ConfigurationError(f"unknown architecture '{architecture}'")


def fit_to_decoder(features: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Reshape features to the decoder input; vectors feed fc decoders as (B, D, 1, 1)."""
    expected = tuple(spec.input_shape)
    if tuple(features.shape[1:]) == expected:
        return features
    if expected[1:] == (1, 1) and int(np.prod(features.shape[1:])) == expected[0]:
        return features.reshape(features.shape[0], expected[0], 1, 1)
    raise DimensionError(
        "input", f"features of shape {tuple(features.shape[1:])} do not fit the '{spec.name}' "
                 f"decoder, which expects {expected}"
    )


class InversionModel:
    """A decoder Network and the feature source it inverts."""

    def __init__(self, decoder: Network, source: FeatureSource, target_size: Tuple[int, int]):
        self.decoder = decoder
        self.source = source
        self.target_size = tuple(target_size)

    @property
    def output_size(self) -> Tuple[int, int]:
        _, height, width = self.decoder.output_shape
        return width, height

    def decode(self, features: np.ndarray, batch: int = 16) -> np.ndarray:
        """(B, C, h, w) features to (B, 3, H', W') images in [0, 1]."""
        features = fit_to_decoder(np.asarray(features, dtype=self.decoder.dtype), self.decoder.spec)
        outputs = [
            uncenter(self.decoder.forward(features[i:i + batch]).data)
            for i in range(0, len(features), batch)
        ]
        return np.concatenate(outputs) if outputs else np.zeros((0,) + self.decoder.output_shape, np.float32)

    def reconstruct(self, images: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
        return self.decode(self.source.extract(images, names))

    def upsample(self, reconstructions: np.ndarray) -> np.ndarray:
        """Bilinearly resize decoder outputs to the target image size."""
        if self.output_size == self.target_size:
            return reconstructions
        return np.stack([resize_bilinear(r, self.target_size) for r in reconstructions])


def build_inversion_model(features: FeatureConfig, network: NetworkConfig, target_size: Tuple[int, int],
                          rng: np.random.Generator, seed: int = 0) -> InversionModel:
    """Fresh decoder with He-initialized weights for the configured feature source."""
    source = build_feature_source(features, seed=seed)
    shape = source.feature_shape(target_size)
    architecture = network.architecture or default_architecture(source.extractor, shape)
    spec = build_decoder_spec(architecture, shape, target_size, network.width)
    return InversionModel(network_builder.build_network(spec, rng), source, target_size)


def model_from_checkpoint(checkpoint: Checkpoint) -> InversionModel:
    """
    Rebuild the decoder and its feature source from an inversion checkpoint.

    Raises:
        ConfigurationError: The checkpoint lacks a feature source description
    """
    meta = checkpoint.metadata
    source_meta = meta.get("feature_source")
    if source_meta is None:
        raise ConfigurationError(f"checkpoint of '{checkpoint.network.name}' has no feature source")
    decoder_params = {name: Tensor(value) for name, value in checkpoint.decoder_parameters().items()}
    decoder = Network(checkpoint.network, decoder_params)

    if source_meta["extractor"] == "encoder_layer":
        if checkpoint.encoder is None:
            raise ConfigurationError("encoder_layer checkpoint carries no encoder")
        encoder_params = {n: Tensor(v) for n, v in checkpoint.encoder_parameters().items()}
        source: FeatureSource = EncoderFeatureSource(
            checkpoint.encoder, Network(checkpoint.encoder.network, encoder_params), source_meta["tap"]
        )
    else:
        keypoint_dir = source_meta.get("keypoint_dir")
        source = ShallowFeatureSource(
            source_meta["extractor"], source_meta["cell"], seed=source_meta.get("seed", 0),
            normalize_lbp=source_meta.get("normalize_lbp", True),
            keypoint_dir=None if keypoint_dir is None else Path(keypoint_dir),
        )
    target = tuple(meta.get("target_size") or (decoder.output_shape[2], decoder.output_shape[1]))
    return InversionModel(decoder, source, target)


def source_metadata(source: FeatureSource) -> dict:
    info = source.describe()
    keypoint_dir = getattr(source, "keypoint_dir", None)
    info["keypoint_dir"] = None if keypoint_dir is None else str(keypoint_dir)
    return info
