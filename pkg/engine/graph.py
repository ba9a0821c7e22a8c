"""
Executable computation graph built from a NetworkSpec.

Every LayerSpec becomes one OpNode, or two when it carries a leaky ReLU slope:
the primary node ``<layer>:pre`` followed by the activation node ``<layer>``.
Downstream layers always read the post-activation value.
"""
import logging
from typing import Dict, List, Optional

import numpy as np

from engine import ops
from engine.tensor import PRODUCTION_DTYPE, Tensor
from schemas.errors import DimensionError, NumericalError, StateError, UsageError
from schemas.network_schemas import INPUT_NAME, PARAMETERIZED_KINDS, LayerSpec, NetworkSpec, OpKind

logger = logging.getLogger(__name__)


class OpNode:
    """A single operation with its parameters and forward cache."""

    def __init__(self, name: str, kind: OpKind, inputs: List[str], layer: LayerSpec,
                 weight: Optional[Tensor] = None, bias: Optional[Tensor] = None):
        self.name = name
        self.kind = kind
        self.inputs = inputs
        self.layer = layer
        self.weight = weight
        self.bias = bias
        self.cache = None

    @property
    def parameterized(self) -> bool:
        return self.weight is not None

    def forward(self, values: List[np.ndarray]) -> np.ndarray:
        kind = self.kind
        if kind == OpKind.CONV:
            out, self.cache = ops.conv2d_forward(
                values[0], self.weight.data, self.bias.data, stride=self.layer.stride
            )
        elif kind == OpKind.UPCONV:
            out, self.cache = ops.upconv2d_forward(values[0], self.weight.data, self.bias.data)
        elif kind == OpKind.FC:
            out, self.cache = ops.fully_connected_forward(values[0], self.weight.data, self.bias.data)
        elif kind == OpKind.LEAKY_RELU:
            out, self.cache = ops.leaky_relu_forward(values[0], self.layer.slope or 0.0)
        elif kind == OpKind.MAXPOOL:
            out, self.cache = ops.max_pool2d_forward(values[0], self.layer.kernel, self.layer.stride)
        elif kind == OpKind.CONCAT:
            out, self.cache = ops.concat_channels_forward(values)
        elif kind == OpKind.RESHAPE:
            out, self.cache = ops.reshape_forward(values[0], self.layer.target_shape)
        else:
            raise UsageError(f"'{kind.value}' nodes are evaluated by the trainer, not the graph")
        return out

    def backward(self, upstream: np.ndarray) -> List[np.ndarray]:
        """Gradients w.r.t. each input; parameter gradients accumulate on the tensors."""
        if self.cache is None:
            raise StateError(f"node '{self.name}' has no forward cache")
        kind = self.kind
        if kind in PARAMETERIZED_KINDS:
            if kind == OpKind.CONV:
                grad_in, grad_w, grad_b = ops.conv2d_backward(self.cache, upstream)
            elif kind == OpKind.UPCONV:
                grad_in, grad_w, grad_b = ops.upconv2d_backward(self.cache, upstream)
            else:
                grad_in, grad_w, grad_b = ops.fully_connected_backward(self.cache, upstream)
            self.weight.accumulate_grad(grad_w.reshape(self.weight.shape))
            self.bias.accumulate_grad(grad_b.reshape(self.bias.shape))
            return [grad_in]
        if kind == OpKind.LEAKY_RELU:
            return [ops.leaky_relu_backward(self.cache, upstream)]
        if kind == OpKind.MAXPOOL:
            return [ops.max_pool2d_backward(self.cache, upstream)]
        if kind == OpKind.CONCAT:
            return ops.concat_channels_backward(self.cache, upstream)
        return [ops.reshape_backward(self.cache, upstream)]

    def signature(self) -> Optional[np.ndarray]:
        """Piecewise-linear region this node's last forward landed in."""
        if self.cache is None:
            return None
        if self.kind == OpKind.LEAKY_RELU:
            return self.cache[0].copy()
        if self.kind == OpKind.MAXPOOL:
            return self.cache[0].copy()
        return None

    def __repr__(self) -> str:
        return f"OpNode({self.name!r}, {self.kind.value}, inputs={self.inputs})"


class Network:
    """
    Runs a NetworkSpec forward and backward.

    Args:
        spec: Validated architecture description
        params: Optional mapping '<layer>.weight' / '<layer>.bias' to Tensor;
            missing entries are allocated as zeros
        dtype: Working dtype of parameters and activations
    """

    def __init__(self, spec: NetworkSpec, params: Optional[Dict[str, Tensor]] = None,
                 dtype=PRODUCTION_DTYPE):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.parameters: Dict[str, Tensor] = {}
        params = params or {}

        for name, shape in spec.parameter_shapes().items():
            tensor = params.get(name)
            if tensor is None:
                tensor = Tensor.zeros(shape, dtype=self.dtype)
            elif tuple(tensor.shape) != tuple(shape):
                raise DimensionError("shape", f"parameter '{name}' is {tensor.shape}, expected {shape}")
            elif tensor.dtype != self.dtype:
                tensor = tensor.astype(self.dtype)
            self.parameters[name] = tensor

        self.nodes: List[OpNode] = []
        for layer in spec.layers:
            self.nodes.extend(self._expand(layer))
        self.activations: Dict[str, np.ndarray] = {}
        self._last_node: Optional[str] = None

    def _expand(self, layer: LayerSpec) -> List[OpNode]:
        if layer.kind in PARAMETERIZED_KINDS:
            weight = self.parameters[f"{layer.name}.weight"]
            bias = self.parameters[f"{layer.name}.bias"]
            if layer.slope is None:
                return [OpNode(layer.name, layer.kind, list(layer.inputs), layer, weight, bias)]
            pre = f"{layer.name}:pre"
            return [
                OpNode(pre, layer.kind, list(layer.inputs), layer, weight, bias),
                OpNode(layer.name, OpKind.LEAKY_RELU, [pre], layer),
            ]
        return [OpNode(layer.name, layer.kind, list(layer.inputs), layer)]

    @property
    def input_shape(self):
        return tuple(self.spec.input_shape)

    @property
    def output_shape(self):
        return tuple(self.spec.output_shape)

    def _index_of(self, name: str) -> int:
        for index, node in enumerate(self.nodes):
            if node.name == name:
                return index
        raise UsageError(f"network '{self.spec.name}' has no node '{name}'")

    def forward(self, x, stop_at: Optional[str] = None) -> Tensor:
        """Run the graph on ``x`` and return the output of the last node (or ``stop_at``)."""
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        data = np.ascontiguousarray(data, dtype=self.dtype)
        if data.ndim != 4:
            raise DimensionError("rank", f"expected NCHW input, got {data.shape}")
        if data.shape[1:] != self.input_shape:
            raise DimensionError(
                "input", f"'{self.spec.name}' expects (B, {self.input_shape}), got {data.shape}"
            )
        last = len(self.nodes) - 1 if stop_at is None else self._index_of(stop_at)

        self.activations = {INPUT_NAME: data}
        for node in self.nodes[:last + 1]:
            self.activations[node.name] = node.forward([self.activations[s] for s in node.inputs])
        # stale caches past the stop point must not feed a later backward
        for node in self.nodes[last + 1:]:
            node.cache = None
        self._last_node = self.nodes[last].name
        return Tensor(self.activations[self._last_node])

    def __call__(self, x, stop_at: Optional[str] = None) -> Tensor:
        return self.forward(x, stop_at)

    def activation(self, name: str) -> np.ndarray:
        if name not in self.activations:
            raise StateError(f"no activation '{name}' recorded; run forward first")
        return self.activations[name]

    def backward(self, grad, start_at: Optional[str] = None) -> np.ndarray:
        """
        Backpropagate ``grad`` (w.r.t. the output of ``start_at``, default the
        last node evaluated) and return the gradient w.r.t. the network input.
        """
        if self._last_node is None:
            raise StateError(f"backward on '{self.spec.name}' before forward")
        start = self._last_node if start_at is None else start_at
        start_index = self._index_of(start)
        upstream = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
        expected = self.activations.get(start)
        if expected is None:
            raise StateError(f"node '{start}' was not evaluated in the last forward")
        if upstream.shape != expected.shape:
            raise DimensionError("shape", f"grad {upstream.shape} vs output {expected.shape}")

        grads: Dict[str, np.ndarray] = {start: upstream.astype(self.dtype, copy=False)}
        for node in reversed(self.nodes[:start_index + 1]):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            for source, input_grad in zip(node.inputs, node.backward(g)):
                if source in grads:
                    grads[source] = grads[source] + input_grad
                else:
                    grads[source] = input_grad
        input_grad = grads.get(INPUT_NAME)
        if input_grad is None:
            input_grad = np.zeros_like(self.activations[INPUT_NAME])
        return input_grad

    def zero_grad(self) -> None:
        for tensor in self.parameters.values():
            tensor.zero_grad()

    def gradients(self, check_finite: bool = False) -> Dict[str, np.ndarray]:
        """Parameter name to accumulated gradient (zeros where nothing accumulated)."""
        result = {}
        for name, tensor in self.parameters.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if check_finite and not np.all(np.isfinite(grad)):
                raise NumericalError(name.split(".")[0], f"gradient of '{name}' is not finite")
            result[name] = grad
        return result

    def activation_signature(self) -> List[np.ndarray]:
        return [sig for sig in (node.signature() for node in self.nodes) if sig is not None]

    def clone(self) -> "Network":
        """Same parameter arrays, separate gradient buffers and caches."""
        shared = {name: Tensor(t.data) for name, t in self.parameters.items()}
        for name, tensor in shared.items():
            tensor.data = self.parameters[name].data
        return Network(self.spec, shared, self.dtype)

    def astype(self, dtype) -> "Network":
        """Independent copy with parameters converted to ``dtype``."""
        params = {name: Tensor(t.data.astype(dtype)) for name, t in self.parameters.items()}
        return Network(self.spec, params, dtype)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.parameters.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.parameters) - set(state)
        if missing:
            raise UsageError(f"state is missing parameters: {sorted(missing)}")
        for name, tensor in self.parameters.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise DimensionError("shape", f"'{name}' is {value.shape}, expected {tensor.shape}")
            tensor.data[...] = value

    def __repr__(self) -> str:
        return f"Network({self.spec.name!r}, params={self.spec.parameter_count()})"
