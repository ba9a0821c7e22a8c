"""
Forward and backward kernels for every layer kind the decoders and the toy
encoder use.

Kernels work on plain NCHW ndarrays. Each ``*_forward`` returns the output and
a cache object; the matching ``*_backward`` consumes that cache. Computation
stays in the dtype of the inputs: float32 for training, float64 for gradient
verification.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from schemas.errors import DimensionError, StateError, UsageError
from schemas.network_schemas import padding_for_kernel

Padding = Tuple[int, int, int, int]


def resolve_padding(kernel: int, padding: Optional[Sequence[int]] = None) -> Padding:
    """(top, bottom, left, right); defaults to the same-size rule of the tables."""
    if padding is None:
        before, after = padding_for_kernel(kernel)
        return (before, after, before, after)
    if len(padding) == 2:
        return (padding[0], padding[1], padding[0], padding[1])
    if len(padding) != 4:
        raise UsageError(f"padding must have 2 or 4 entries, got {padding}")
    return tuple(int(p) for p in padding)


def _require_cache(cache, op: str):
    if cache is None:
        raise StateError(f"{op} backward called without a forward cache")


# ==================== Convolution ====================

@dataclass
class ConvCache:
    windows: np.ndarray
    weights: np.ndarray
    input_shape: Tuple[int, ...]
    padded_shape: Tuple[int, ...]
    stride: int
    padding: Padding


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: Optional[Sequence[int]] = None):
    """Zero-padded 2-D cross-correlation. Returns (output, cache)."""
    if weights.ndim != 4:
        raise DimensionError("rank", f"weights must be (outC, inC, K, K), got {weights.shape}")
    out_channels, in_channels, kernel, kernel_w = weights.shape
    if kernel != kernel_w:
        raise DimensionError("width", f"kernel must be square, got {kernel}x{kernel_w}")
    if x.ndim != 4:
        raise DimensionError("rank", f"input must be NCHW, got {x.shape}")
    if x.shape[1] != in_channels:
        raise DimensionError("channels", f"input has {x.shape[1]} channels, weights expect {in_channels}")
    if bias.size != out_channels:
        raise DimensionError("channels", f"bias has {bias.size} entries for {out_channels} filters")
    if stride < 1:
        raise UsageError(f"stride must be positive, got {stride}")
    pad = resolve_padding(kernel, padding)
    if any(p < 0 or p >= kernel for p in pad):
        raise UsageError(f"padding {pad} must lie in [0, {kernel})")

    top, bottom, left, right = pad
    padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    if padded.shape[2] < kernel:
        raise DimensionError("height", f"padded height {padded.shape[2]} < kernel {kernel}")
    if padded.shape[3] < kernel:
        raise DimensionError("width", f"padded width {padded.shape[3]} < kernel {kernel}")

    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias.reshape(1, out_channels, 1, 1).astype(out.dtype, copy=False)
    cache = ConvCache(windows, weights, x.shape, padded.shape, stride, pad)
    return out, cache


def conv2d_backward(cache: Optional[ConvCache], upstream: np.ndarray):
    """Returns (input_grad, weight_grad, bias_grad)."""
    _require_cache(cache, "conv2d")
    windows = cache.windows
    batch, _, out_h, out_w = upstream.shape
    if windows.shape[:1] + windows.shape[2:4] != (batch, out_h, out_w):
        raise DimensionError("shape", f"upstream grad {upstream.shape} does not match forward output")
    kernel = cache.weights.shape[2]
    stride = cache.stride

    bias_grad = upstream.sum(axis=(0, 2, 3))
    weight_grad = np.tensordot(upstream, windows, axes=([0, 2, 3], [0, 2, 3]))

    columns = np.tensordot(upstream, cache.weights, axes=([1], [0]))  # (B, Ho, Wo, C, K, K)
    padded_grad = np.zeros(cache.padded_shape, dtype=upstream.dtype)
    row_span = stride * (out_h - 1) + 1
    col_span = stride * (out_w - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            padded_grad[:, :, i:i + row_span:stride, j:j + col_span:stride] += (
                columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    top, _, left, _ = cache.padding
    height, width = cache.input_shape[2:]
    input_grad = np.ascontiguousarray(padded_grad[:, :, top:top + height, left:left + width])
    return input_grad, weight_grad, bias_grad


def conv2d(x, weights, bias, stride=1, padding=None) -> np.ndarray:
    return conv2d_forward(x, weights, bias, stride, padding)[0]


# ==================== Up-convolution ====================

def upsample2x_zero_stuff(x: np.ndarray) -> np.ndarray:
    """Each value becomes the top-left entry of a 2x2 block of zeros."""
    if x.size == 0:
        raise DimensionError("shape", f"cannot upsample an empty tensor {x.shape}")
    batch, channels, height, width = x.shape
    out = np.zeros((batch, channels, 2 * height, 2 * width), dtype=x.dtype)
    out[:, :, ::2, ::2] = x
    return out


def upsample2x_zero_stuff_backward(upstream: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(upstream[:, :, ::2, ::2])


def upconv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Zero-stuff upsampling followed by a stride-1 same-size convolution."""
    return conv2d_forward(upsample2x_zero_stuff(x), weights, bias, stride=1, padding=None)


def upconv2d_backward(cache: Optional[ConvCache], upstream: np.ndarray):
    _require_cache(cache, "upconv2d")
    upsampled_grad, weight_grad, bias_grad = conv2d_backward(cache, upstream)
    return upsample2x_zero_stuff_backward(upsampled_grad), weight_grad, bias_grad


def upconv2d(x, weights, bias) -> np.ndarray:
    return upconv2d_forward(x, weights, bias)[0]


# ==================== Activations ====================

def leaky_relu_forward(x: np.ndarray, slope: float):
    if not 0.0 <= slope < 1.0:
        raise UsageError(f"leaky ReLU slope must lie in [0, 1), got {slope}")
    positive = x >= 0
    return np.where(positive, x, x * x.dtype.type(slope)), (positive, slope)


def leaky_relu_backward(cache, upstream: np.ndarray) -> np.ndarray:
    _require_cache(cache, "leaky_relu")
    positive, slope = cache
    # gradient at exactly zero is 1
    return np.where(positive, upstream, upstream * upstream.dtype.type(slope))


def leaky_relu(x, slope) -> np.ndarray:
    return leaky_relu_forward(x, slope)[0]


# ==================== Fully connected ====================

def fully_connected_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Affine map on per-sample flattened input. Output is (B, outN, 1, 1)."""
    matrix = weights.reshape(weights.shape[0], -1)
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != matrix.shape[1]:
        raise DimensionError(
            "features", f"input flattens to {flat.shape[1]} values, weights expect {matrix.shape[1]}"
        )
    out = flat @ matrix.T + bias.reshape(1, -1).astype(flat.dtype, copy=False)
    return out.reshape(x.shape[0], matrix.shape[0], 1, 1), (flat, matrix, x.shape, weights.shape)


def fully_connected_backward(cache, upstream: np.ndarray):
    _require_cache(cache, "fully_connected")
    flat, matrix, input_shape, weight_shape = cache
    grad = upstream.reshape(upstream.shape[0], -1)
    weight_grad = (grad.T @ flat).reshape(weight_shape)
    input_grad = (grad @ matrix).reshape(input_shape)
    return input_grad, weight_grad, grad.sum(axis=0)


def fully_connected(x, weights, bias) -> np.ndarray:
    return fully_connected_forward(x, weights, bias)[0]


# ==================== Max pooling ====================

def max_pool2d_forward(x: np.ndarray, window: int, stride: int):
    """Per-window maximum; ties resolve to the first site in row-major order."""
    if window < 1 or stride < 1:
        raise UsageError(f"window and stride must be positive, got {window}, {stride}")
    if window > x.shape[2]:
        raise DimensionError("height", f"window {window} > input height {x.shape[2]}")
    if window > x.shape[3]:
        raise DimensionError("width", f"window {window} > input width {x.shape[3]}")
    windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(windows.shape[:4] + (window * window,))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), (argmax, x.shape, window, stride)


def max_pool2d_backward(cache, upstream: np.ndarray) -> np.ndarray:
    _require_cache(cache, "max_pool2d")
    argmax, input_shape, window, stride = cache
    out_h, out_w = argmax.shape[2:]
    grad = np.zeros(input_shape, dtype=upstream.dtype)
    row_span = stride * (out_h - 1) + 1
    col_span = stride * (out_w - 1) + 1
    for i in range(window):
        for j in range(window):
            routed = np.where(argmax == i * window + j, upstream, 0)
            grad[:, :, i:i + row_span:stride, j:j + col_span:stride] += routed
    return grad


def max_pool2d(x, window, stride) -> np.ndarray:
    return max_pool2d_forward(x, window, stride)[0]


# ==================== Structural ====================

def concat_channels_forward(tensors: List[np.ndarray]):
    first = tensors[0]
    for other in tensors[1:]:
        if other.shape[0] != first.shape[0]:
            raise DimensionError("batch", f"{first.shape} vs {other.shape}")
        if other.shape[2] != first.shape[2]:
            raise DimensionError("height", f"{first.shape} vs {other.shape}")
        if other.shape[3] != first.shape[3]:
            raise DimensionError("width", f"{first.shape} vs {other.shape}")
    return np.concatenate(tensors, axis=1), [t.shape[1] for t in tensors]


def concat_channels_backward(cache, upstream: np.ndarray) -> List[np.ndarray]:
    _require_cache(cache, "concat_channels")
    bounds = np.cumsum(cache)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(upstream, bounds, axis=1)]


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return concat_channels_forward([a, b])[0]


def reshape_forward(x: np.ndarray, target_shape: Sequence[int]):
    target = (x.shape[0], *target_shape)
    if int(np.prod(target)) != x.size:
        raise DimensionError("channels", f"cannot reshape {x.shape} to {target}")
    return x.reshape(target), x.shape


def reshape_backward(cache, upstream: np.ndarray) -> np.ndarray:
    _require_cache(cache, "reshape")
    return upstream.reshape(cache)


# ==================== Losses ====================

def mse_loss(prediction: np.ndarray, target: np.ndarray, batch: Optional[int] = None):
    """
    Sum of squared differences divided by the batch size.

    ``batch`` overrides the divisor when a mini-batch is split into shards.
    Returns (loss, gradient w.r.t. prediction).
    """
    if prediction.shape != target.shape:
        raise DimensionError("shape", f"prediction {prediction.shape} vs target {target.shape}")
    divisor = batch or prediction.shape[0]
    diff = prediction - target.astype(prediction.dtype, copy=False)
    loss = float(np.sum(np.square(diff, dtype=np.float64)) / divisor)
    return loss, diff * diff.dtype.type(2.0 / divisor)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, batch: Optional[int] = None):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    flat = logits.reshape(logits.shape[0], -1)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (flat.shape[0],):
        raise DimensionError("batch", f"{labels.shape[0]} labels for {flat.shape[0]} samples")
    divisor = batch or flat.shape[0]
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(flat.shape[0])
    loss = float(-np.sum(log_probs[rows, labels], dtype=np.float64) / divisor)
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= divisor
    return loss, grad.reshape(logits.shape).astype(logits.dtype, copy=False)
