"""
Architecture tables as NetworkSpecs, the toy classification encoder, and
weight initialization.

Every builder takes the input spatial size and a ``width`` multiplier on the
hidden channel counts. The defaults reproduce the published tables.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine.graph import Network
from engine.tensor import PRODUCTION_DTYPE, Tensor
from schemas.errors import ConfigurationError, DimensionError
from schemas.feature_schemas import HOG_CHANNELS, LBP_CHANNELS, SIFT_GRID_CHANNELS
from schemas.network_schemas import INPUT_NAME, EncoderSpec, LayerSpec, NetworkSpec, OpKind

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
RELU_SLOPE = 0.0
RGB = 3


def scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


def _conv(name: str, source: str, kernel: int, stride: int, channels: int,
          slope: Optional[float] = LEAKY_SLOPE) -> LayerSpec:
    return LayerSpec(name=name, kind=OpKind.CONV, inputs=[source], kernel=kernel,
                     stride=stride, out_channels=channels, slope=slope)


def _upconv(name: str, source: str, kernel: int, channels: int,
            slope: Optional[float] = LEAKY_SLOPE) -> LayerSpec:
    return LayerSpec(name=name, kind=OpKind.UPCONV, inputs=[source], kernel=kernel,
                     stride=2, out_channels=channels, slope=slope)


def _fc(name: str, source: str, units: int, slope: Optional[float] = LEAKY_SLOPE) -> LayerSpec:
    return LayerSpec(name=name, kind=OpKind.FC, inputs=[source], out_channels=units, slope=slope)


def _chain(layers: List[LayerSpec], rows: Sequence[tuple], source: str, make) -> str:
    for row in rows:
        layers.append(make(row[0], source, *row[1:]))
        source = row[0]
    return source


def _require_divisible(size: int, factor: int, what: str) -> None:
    if size < factor or size % factor:
        raise ConfigurationError(f"{what} input size {size} must be a positive multiple of {factor}")


def build_hog_net(input_size: int = 32, width: float = 1.0) -> NetworkSpec:
    """Two-stream decoder for 31-channel HOG maps; output is 8x the input grid."""
    _require_divisible(input_size, 8, "HOG net")
    w = lambda c: scaled(c, width)
    layers: List[LayerSpec] = []
    a = _chain(layers, [("convA1", 5, 2, w(256)), ("convA2", 5, 2, w(512)), ("convA3", 3, 2, w(1024))],
               INPUT_NAME, _conv)
    a = _chain(layers, [("upconvA1", 4, w(512)), ("upconvA2", 4, w(256)), ("upconvA3", 4, w(128))],
               a, _upconv)
    b = _chain(layers, [("convB1", 5, 1, w(128)), ("convB2", 3, 1, w(128))], INPUT_NAME, _conv)
    layers.append(LayerSpec(name="concat", kind=OpKind.CONCAT, inputs=[a, b]))
    j = _chain(layers, [("convJ1", 3, 1, w(256)), ("convJ2", 3, 1, w(128))], "concat", _conv)
    j = _chain(layers, [("upconvJ4", 4, w(64)), ("upconvJ5", 4, w(32))], j, _upconv)
    layers.append(_upconv("upconvJ6", j, 4, RGB, slope=None))
    return NetworkSpec(
        name="hog",
        input_shape=(HOG_CHANNELS, input_size, input_size),
        output_shape=(RGB, 8 * input_size, 8 * input_size),
        layers=layers,
    )


def build_lbp_net(input_size: int = 16, width: float = 1.0) -> NetworkSpec:
    """Two-stream decoder for 58-channel LBP maps; output is 16x the input grid."""
    _require_divisible(input_size, 4, "LBP net")
    w = lambda c: scaled(c, width)
    layers: List[LayerSpec] = []
    a = _chain(layers, [("convA1", 5, 2, w(256)), ("convA2", 5, 2, w(512)), ("convA3", 3, 1, w(1024))],
               INPUT_NAME, _conv)
    a = _chain(layers, [("upconvA1", 4, w(512)), ("upconvA2", 4, w(256))], a, _upconv)
    b = _chain(layers, [("convB1", 5, 1, w(128)), ("convB2", 3, 1, w(128))], INPUT_NAME, _conv)
    layers.append(LayerSpec(name="concat", kind=OpKind.CONCAT, inputs=[a, b]))
    j = _chain(layers, [("convJ1", 3, 1, w(256)), ("convJ2", 3, 1, w(128))], "concat", _conv)
    j = _chain(layers, [("upconvJ3", 4, w(128)), ("upconvJ4", 4, w(64)), ("upconvJ5", 4, w(32))],
               j, _upconv)
    layers.append(_upconv("upconvJ6", j, 4, RGB, slope=None))
    return NetworkSpec(
        name="lbp",
        input_shape=(LBP_CHANNELS, input_size, input_size),
        output_shape=(RGB, 16 * input_size, 16 * input_size),
        layers=layers,
    )


def build_sift_net(input_size: int = 64, width: float = 1.0) -> NetworkSpec:
    """Single-stream decoder for 133-channel SIFT grids; output is 4x the input grid."""
    _require_divisible(input_size, 16, "SIFT net")
    w = lambda c: scaled(c, width)
    layers: List[LayerSpec] = []
    x = _chain(layers, [
        ("conv1", 5, 2, w(256)), ("conv2", 3, 2, w(512)), ("conv3", 3, 2, w(1024)),
        ("conv4", 3, 2, w(2048)), ("conv5", 3, 1, w(2048)), ("conv6", 3, 1, w(1024)),
    ], INPUT_NAME, _conv)
    x = _chain(layers, [
        ("upconv1", 4, w(512)), ("upconv2", 4, w(256)), ("upconv3", 4, w(128)),
        ("upconv4", 4, w(64)), ("upconv5", 4, w(32)),
    ], x, _upconv)
    layers.append(_upconv("upconv6", x, 4, RGB, slope=None))
    return NetworkSpec(
        name="sift",
        input_shape=(SIFT_GRID_CHANNELS, input_size, input_size),
        output_shape=(RGB, 4 * input_size, 4 * input_size),
        layers=layers,
    )


def _halving_schedule(first: int, count: int) -> List[int]:
    """Channels of ``count`` up-convolutions: keep, halve each step, end in RGB."""
    if count < 1:
        raise ConfigurationError("at least one up-convolution is required")
    schedule = [first >> step for step in range(count - 1)] + [RGB]
    if min(schedule) < 1:
        raise ConfigurationError(f"cannot halve {first} channels over {count} up-convolutions")
    return schedule


def build_fc_inversion_net(input_dim: int, upconvs: int = 5, width: float = 1.0) -> NetworkSpec:
    """
    Decoder for vector features: fc1-fc3, reshape to 4x4, then up-convolutions.

    Args:
        input_dim: Length of the feature vector
        upconvs: Number of up-convolutions; 5 gives a 128x128 output
        width: Channel multiplier

    Returns:
        NetworkSpec with output (3, 4 * 2**upconvs, 4 * 2**upconvs)
    """
    if input_dim < 1:
        raise ConfigurationError(f"input_dim must be positive, got {input_dim}")
    hidden = scaled(256, width)
    units = 16 * hidden
    layers: List[LayerSpec] = []
    x = _chain(layers, [("fc1", units), ("fc2", units), ("fc3", units)], INPUT_NAME, _fc)
    layers.append(LayerSpec(name="reshape", kind=OpKind.RESHAPE, inputs=[x], target_shape=(hidden, 4, 4)))
    x = "reshape"
    schedule = _halving_schedule(hidden, upconvs)
    for index, channels in enumerate(schedule, start=1):
        last = index == len(schedule)
        layers.append(_upconv(f"upconv{index}", x, 5, channels, slope=None if last else LEAKY_SLOPE))
        x = f"upconv{index}"
    side = 4 * 2 ** upconvs
    return NetworkSpec(name="fc", input_shape=(input_dim, 1, 1), output_shape=(RGB, side, side), layers=layers)


def upconv_count(feature_size: int, target_size: int) -> int:
    if target_size <= feature_size:
        raise ConfigurationError(f"target size {target_size} must exceed the feature size {feature_size}")
    return int(math.ceil(math.log2(target_size / feature_size)))


def build_conv_inversion_net(input_shape: Tuple[int, int, int], target_size: Optional[int] = None,
                             conv_kernel: int = 5, width: float = 1.0) -> NetworkSpec:
    """
    Decoder for convolutional feature maps.

    Three stride-1 convolutions keep the map size, then ceil(log2(target / H))
    K=5 up-convolutions halve the channels down to an RGB output.

    Args:
        input_shape: (C, H, W) of the feature map
        target_size: Requested output side; defaults to 32 * H
        conv_kernel: Kernel of the three stride-1 convolutions
        width: Channel multiplier

    Returns:
        NetworkSpec with output (3, H * 2**n, W * 2**n)
    """
    channels, height, width_px = input_shape
    if height < 4:
        raise DimensionError("height", f"feature map height {height} < 4")
    if width_px < 4:
        raise DimensionError("width", f"feature map width {width_px} < 4")
    target = target_size or 32 * height
    count = upconv_count(height, target)
    hidden = scaled(channels, width)

    layers: List[LayerSpec] = []
    x = _chain(layers, [(f"conv{i}", conv_kernel, 1, hidden) for i in (1, 2, 3)], INPUT_NAME, _conv)
    schedule = _halving_schedule(hidden, count)
    for index, out in enumerate(schedule, start=1):
        last = index == len(schedule)
        layers.append(_upconv(f"upconv{index}", x, 5, out, slope=None if last else LEAKY_SLOPE))
        x = f"upconv{index}"
    factor = 2 ** count
    return NetworkSpec(
        name="conv",
        input_shape=tuple(input_shape),
        output_shape=(RGB, height * factor, width_px * factor),
        layers=layers,
    )


ENCODER_TAPS = {
    "conv1": "pool1",
    "conv2": "pool2",
    "conv3": "conv3",
    "conv4": "conv4",
    "conv5": "pool5",
    "fc6": "fc6",
    "fc7": "fc7",
    "fc8": "fc8",
}


def build_toy_encoder(input_shape: Tuple[int, int, int] = (3, 64, 64), classes: int = 10,
                      width: float = 1.0) -> EncoderSpec:
    """Small ReLU classifier whose stages stand in for conv1..fc8 of a large CNN."""
    if classes < 2:
        raise ConfigurationError(f"the encoder needs at least 2 classes, got {classes}")
    _require_divisible(input_shape[1], 16, "toy encoder")
    w = lambda c: scaled(c, width)
    pool = lambda name, source: LayerSpec(name=name, kind=OpKind.MAXPOOL, inputs=[source], kernel=2, stride=2)
    layers = [
        _conv("conv1", INPUT_NAME, 5, 2, w(32), slope=RELU_SLOPE),
        pool("pool1", "conv1"),
        _conv("conv2", "pool1", 5, 1, w(64), slope=RELU_SLOPE),
        pool("pool2", "conv2"),
        _conv("conv3", "pool2", 3, 1, w(96), slope=RELU_SLOPE),
        _conv("conv4", "conv3", 3, 1, w(96), slope=RELU_SLOPE),
        _conv("conv5", "conv4", 3, 1, w(64), slope=RELU_SLOPE),
        pool("pool5", "conv5"),
        _fc("fc6", "pool5", w(256), slope=RELU_SLOPE),
        _fc("fc7", "fc6", w(256), slope=RELU_SLOPE),
        _fc("fc8", "fc7", classes, slope=None),
    ]
    network = NetworkSpec(
        name="toy_encoder",
        input_shape=tuple(input_shape),
        output_shape=(classes, 1, 1),
        layers=layers,
    )
    return EncoderSpec(network=network, taps=dict(ENCODER_TAPS), classes=classes)


def init_weights(spec: NetworkSpec, rng: np.random.Generator, dtype=PRODUCTION_DTYPE) -> Dict[str, Tensor]:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases, drawn in layer order."""
    params: Dict[str, Tensor] = {}
    for name, shape in spec.parameter_shapes().items():
        if name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shape, dtype=dtype))
            continue
        fan_in = int(np.prod(shape[1:]))
        std = math.sqrt(2.0 / fan_in)
        params[name] = Tensor((rng.standard_normal(shape) * std).astype(dtype))
    return params


def build_network(spec: NetworkSpec, rng: np.random.Generator, dtype=PRODUCTION_DTYPE) -> Network:
    network = Network(spec, init_weights(spec, rng, dtype), dtype)
    logger.info("[Build] %s: %d parameters, %s -> %s", spec.name, spec.parameter_count(),
                tuple(spec.input_shape), tuple(spec.output_shape))
    return network
