"""Declarative network descriptions and their symbolic shape algebra."""
import json
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigurationError, DimensionError

Shape3 = Tuple[int, int, int]
Shape4 = Tuple[int, int, int, int]

INPUT_NAME = "input"


class OpKind(str, Enum):
    """Operation kinds a graph node can carry."""
    CONV = "conv"
    UPCONV = "upconv"
    FC = "fc"
    LEAKY_RELU = "leaky_relu"
    MAXPOOL = "maxpool"
    CONCAT = "concat"
    RESHAPE = "reshape"
    MSE = "mse"


PARAMETERIZED_KINDS = (OpKind.CONV, OpKind.UPCONV, OpKind.FC)


def padding_for_kernel(kernel: int) -> Tuple[int, int]:
    """
    Zero padding (before, after) for a kernel of size K.

    Odd K pads (K-1)/2 on both sides; even K puts the extra pixel after.
    Strided convolutions then produce ceil(In/S) outputs and up-convolutions
    produce exactly twice their input.
    """
    return (kernel - 1) // 2, kernel // 2


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    before, after = padding_for_kernel(kernel)
    return (size + before + after - kernel) // stride + 1


class LayerSpec(BaseModel):
    """One row of an architecture table."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., description="Unique layer name, e.g. 'convA1'")
    kind: OpKind = Field(..., description="Operation kind")
    inputs: List[str] = Field(..., description="Names of producing layers, or 'input'")
    kernel: Optional[int] = Field(None, description="Kernel size K (conv, upconv, maxpool)")
    stride: int = Field(1, description="Stride S (conv, maxpool)")
    out_channels: Optional[int] = Field(None, description="Output channels (conv, upconv, fc)")
    slope: Optional[float] = Field(
        None, description="Leaky ReLU slope applied to the output; None leaves it linear"
    )
    target_shape: Optional[Shape3] = Field(None, description="(C, H, W) for reshape layers")

    def output_shape(self, in_shapes: List[Shape3]) -> Shape3:
        """Symbolic forward shape of this layer."""
        kind = self.kind
        if kind == OpKind.CONCAT:
            height, width = in_shapes[0][1:]
            for shape in in_shapes[1:]:
                if shape[1] != height:
                    raise DimensionError("height", f"{self.name}: cannot concat {in_shapes}")
                if shape[2] != width:
                    raise DimensionError("width", f"{self.name}: cannot concat {in_shapes}")
            return (sum(s[0] for s in in_shapes), height, width)

        if len(in_shapes) != 1:
            raise ConfigurationError(f"{self.name}: {kind.value} takes exactly one input")
        channels, height, width = in_shapes[0]

        if kind == OpKind.CONV:
            return (
                self.out_channels,
                conv_output_size(height, self.kernel, self.stride),
                conv_output_size(width, self.kernel, self.stride),
            )
        if kind == OpKind.UPCONV:
            return (self.out_channels, 2 * height, 2 * width)
        if kind == OpKind.FC:
            return (self.out_channels, 1, 1)
        if kind == OpKind.LEAKY_RELU:
            return in_shapes[0]
        if kind == OpKind.MAXPOOL:
            if self.kernel > height:
                raise DimensionError("height", f"{self.name}: window {self.kernel} > {height}")
            if self.kernel > width:
                raise DimensionError("width", f"{self.name}: window {self.kernel} > {width}")
            return (
                channels,
                (height - self.kernel) // self.stride + 1,
                (width - self.kernel) // self.stride + 1,
            )
        if kind == OpKind.RESHAPE:
            target = tuple(self.target_shape)
            if target[0] * target[1] * target[2] != channels * height * width:
                raise DimensionError(
                    "channels", f"{self.name}: cannot reshape {in_shapes[0]} to {target}"
                )
            return target
        raise ConfigurationError(f"{self.name}: '{kind.value}' is a loss node, not a layer")

    def parameter_shapes(self, in_shapes: List[Shape3]) -> Dict[str, Shape4]:
        """Weight and bias shapes, empty for parameter-free layers."""
        if self.kind not in PARAMETERIZED_KINDS:
            return {}
        in_channels, height, width = in_shapes[0]
        if self.kind == OpKind.FC:
            weight = (self.out_channels, in_channels * height * width, 1, 1)
        else:
            weight = (self.out_channels, in_channels, self.kernel, self.kernel)
        return {"weight": weight, "bias": (1, self.out_channels, 1, 1)}


class NetworkSpec(BaseModel):
    """Ordered layer list with declared input and output shapes."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., description="Architecture name")
    input_shape: Shape3 = Field(..., description="(C, H, W) of the network input")
    output_shape: Shape3 = Field(..., description="(C, H, W) of the network output")
    layers: List[LayerSpec] = Field(..., description="Layers in execution order")

    @model_validator(mode="after")
    def _check_topology(self) -> "NetworkSpec":
        seen = {INPUT_NAME}
        consumed = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValueError(f"duplicate or reserved layer name '{layer.name}'")
            for source in layer.inputs:
                if source not in seen:
                    raise ValueError(f"layer '{layer.name}' reads '{source}' before it exists")
                consumed.add(source)
            seen.add(layer.name)
        if not self.layers:
            raise ValueError("network has no layers")
        dangling = [l.name for l in self.layers[:-1] if l.name not in consumed]
        if dangling:
            raise ValueError(f"layers without consumers: {dangling}")
        final = self.propagate_shapes()[self.layers[-1].name]
        if tuple(final) != tuple(self.output_shape):
            raise DimensionError(
                "output", f"{self.name}: layers produce {final}, declared {tuple(self.output_shape)}"
            )
        return self

    def propagate_shapes(self) -> Dict[str, Shape3]:
        shapes: Dict[str, Shape3] = {INPUT_NAME: tuple(self.input_shape)}
        for layer in self.layers:
            shapes[layer.name] = layer.output_shape([shapes[s] for s in layer.inputs])
        return shapes

    def parameter_shapes(self) -> Dict[str, Shape4]:
        """Parameter name ('<layer>.weight' / '<layer>.bias') to 4-D shape, in layer order."""
        shapes = self.propagate_shapes()
        result: Dict[str, Shape4] = {}
        for layer in self.layers:
            for role, shape in layer.parameter_shapes([shapes[s] for s in layer.inputs]).items():
                result[f"{layer.name}.{role}"] = shape
        return result

    def parameter_count(self) -> int:
        total = 0
        for shape in self.parameter_shapes().values():
            count = 1
            for dim in shape:
                count *= dim
            total += count
        return total

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def describe(self) -> str:
        """Canonical JSON description used inside checkpoint files."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


class EncoderSpec(BaseModel):
    """Toy classification encoder plus the named taps that get inverted."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    network: NetworkSpec
    taps: Dict[str, str] = Field(..., description="Tap name (conv1..fc8) to layer name")
    classes: int = Field(..., ge=2, description="Number of classes of the fc8 analogue")

    @model_validator(mode="after")
    def _check_taps(self) -> "EncoderSpec":
        names = {layer.name for layer in self.network.layers}
        missing = {tap: layer for tap, layer in self.taps.items() if layer not in names}
        if missing:
            raise ValueError(f"taps reference unknown layers: {missing}")
        if "fc8" in self.taps:
            width = self.network.propagate_shapes()[self.taps["fc8"]][0]
            if width != self.classes:
                raise ValueError(f"fc8 width {width} != classes {self.classes}")
        return self

    def tap_shape(self, tap: str) -> Shape3:
        return self.network.propagate_shapes()[self.taps[tap]]
