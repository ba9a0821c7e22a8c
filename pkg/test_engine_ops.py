"""
Kernel tests: worked examples, independent oracles and central-difference
checks of every backward pass (64-bit, h=1e-5, relative error < 1e-4).
"""
import numpy as np
import pytest

from engine import ops
from engine.gradcheck import check_gradient
from schemas.errors import DimensionError, StateError, UsageError

SEEDS = range(20)
TOLERANCE = 1e-4


def naive_conv(x, w, b, stride, pad):
    """Six nested loops over batch, filters, output rows/cols and the kernel window."""
    top, bottom, left, right = pad
    padded = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (top, bottom), (left, right)))
    batch, channels = x.shape[:2]
    filters, _, k, _ = w.shape
    out_h = (padded.shape[2] - k) // stride + 1
    out_w = (padded.shape[3] - k) // stride + 1
    out = np.zeros((batch, filters, out_h, out_w))
    for n in range(batch):
        for f in range(filters):
            for i in range(out_h):
                for j in range(out_w):
                    total = float(b[f])
                    for c in range(channels):
                        for u in range(k):
                            for v in range(k):
                                total += padded[n, c, i * stride + u, j * stride + v] * w[f, c, u, v]
                    out[n, f, i, j] = total
    return out


# ==================== Convolution ====================

def test_conv_sum_of_ones():
    out = ops.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=1, padding=(0, 0))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_conv_hog_first_layer_shape(rng):
    x = rng.standard_normal((1, 31, 32, 32)).astype(np.float32)
    w = rng.standard_normal((256, 31, 5, 5)).astype(np.float32)
    assert ops.conv2d(x, w, np.zeros(256, np.float32), stride=2).shape == (1, 256, 16, 16)


def test_conv_matches_naive_oracle(rng):
    x = rng.standard_normal((1, 2, 7, 7)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = ops.conv2d(x, w, b, stride=2)
    expected = naive_conv(x, w, b, 2, ops.resolve_padding(3))
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-6)


def test_conv_even_kernel_pads_after(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((2, 3, 4, 4))
    b = rng.standard_normal(2)
    out = ops.conv2d(x, w, b)
    assert out.shape == (2, 2, 6, 6)
    np.testing.assert_allclose(out, naive_conv(x, w, b, 1, (1, 2, 1, 2)), atol=1e-12)


def test_conv_backward_zero_upstream(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    out, cache = ops.conv2d_forward(x, rng.standard_normal((3, 2, 3, 3)), np.zeros(3))
    dx, dw, db = ops.conv2d_backward(cache, np.zeros_like(out))
    assert not dx.any() and not dw.any() and not db.any()


def test_conv_backward_without_cache():
    with pytest.raises(StateError):
        ops.conv2d_backward(None, np.zeros((1, 1, 2, 2)))


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError) as info:
        ops.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    assert info.value.axis == "channels"


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    kernel = int(rng.choice([3, 4, 5]))
    stride = int(rng.choice([1, 2]))
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, kernel, kernel))
    b = rng.standard_normal(4)
    out, cache = ops.conv2d_forward(x, w, b, stride=stride)
    upstream = rng.standard_normal(out.shape)
    dx, dw, db = ops.conv2d_backward(cache, upstream)

    scalar = lambda: float(np.sum(ops.conv2d(x, w, b, stride=stride) * upstream))
    assert check_gradient(scalar, x, dx) < TOLERANCE
    assert check_gradient(scalar, w, dw) < TOLERANCE
    assert check_gradient(scalar, b, db) < TOLERANCE


# ==================== Up-convolution ====================

def test_zero_stuff_single_value():
    out = ops.upsample2x_zero_stuff(np.full((1, 1, 1, 1), 5.0))
    np.testing.assert_array_equal(out[0, 0], [[5.0, 0.0], [0.0, 0.0]])


def test_zero_stuff_places_values_on_even_sites():
    out = ops.upsample2x_zero_stuff(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    expected = np.zeros((4, 4))
    expected[0, 0], expected[0, 2], expected[2, 0], expected[2, 2] = 1, 2, 3, 4
    np.testing.assert_array_equal(out[0, 0], expected)


def test_zero_stuff_rejects_empty():
    with pytest.raises(DimensionError):
        ops.upsample2x_zero_stuff(np.zeros((1, 1, 0, 0)))


def test_upconv_fc_decoder_shape(rng):
    x = rng.standard_normal((1, 256, 4, 4)).astype(np.float32)
    w = rng.standard_normal((256, 256, 5, 5)).astype(np.float32)
    assert ops.upconv2d(x, w, np.zeros(256, np.float32)).shape == (1, 256, 8, 8)


def test_upconv_is_zero_stuff_then_conv(rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    w = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    np.testing.assert_array_equal(ops.upconv2d(x, w, b), ops.conv2d(ops.upsample2x_zero_stuff(x), w, b))


def test_upconv_zero_input_gives_bias():
    out = ops.upconv2d(np.zeros((1, 2, 3, 3)), np.ones((2, 2, 5, 5)), np.array([0.5, -1.0]))
    np.testing.assert_array_equal(out[0, 0], np.full((6, 6), 0.5))
    np.testing.assert_array_equal(out[0, 1], np.full((6, 6), -1.0))


@pytest.mark.parametrize("seed", SEEDS)
def test_upconv_gradients(seed):
    rng = np.random.default_rng(seed)
    kernel = int(rng.choice([4, 5]))
    x = rng.standard_normal((1, 2, 3, 3))
    w = rng.standard_normal((2, 2, kernel, kernel))
    b = rng.standard_normal(2)
    out, cache = ops.upconv2d_forward(x, w, b)
    upstream = rng.standard_normal(out.shape)
    dx, dw, db = ops.upconv2d_backward(cache, upstream)

    scalar = lambda: float(np.sum(ops.upconv2d(x, w, b) * upstream))
    assert check_gradient(scalar, x, dx) < TOLERANCE
    assert check_gradient(scalar, w, dw) < TOLERANCE
    assert check_gradient(scalar, b, db) < TOLERANCE


# ==================== Activations ====================

def test_leaky_relu_examples():
    np.testing.assert_allclose(ops.leaky_relu(np.array([-1.0, 0.0, 2.0]), 0.2), [-0.2, 0.0, 2.0])
    np.testing.assert_array_equal(ops.leaky_relu(np.array([-3.0, 3.0]), 0.0), [0.0, 3.0])


def test_leaky_relu_gradient_at_zero_is_one():
    _, cache = ops.leaky_relu_forward(np.array([0.0]), 0.2)
    assert ops.leaky_relu_backward(cache, np.array([1.0]))[0] == 1.0


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(UsageError):
        ops.leaky_relu(np.zeros(2), 1.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_leaky_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    slope = float(rng.uniform(0.0, 0.5))
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    out, cache = ops.leaky_relu_forward(x, slope)
    upstream = rng.standard_normal(out.shape)
    dx = ops.leaky_relu_backward(cache, upstream)
    scalar = lambda: float(np.sum(ops.leaky_relu(x, slope) * upstream))
    assert check_gradient(scalar, x, dx) < TOLERANCE


# ==================== Fully connected ====================

def test_fully_connected_identity(rng):
    x = rng.standard_normal((3, 4, 1, 1))
    out = ops.fully_connected(x, np.eye(4).reshape(4, 4, 1, 1), np.zeros(4))
    np.testing.assert_array_equal(out, x)


def test_fully_connected_size_mismatch():
    with pytest.raises(DimensionError):
        ops.fully_connected(np.zeros((1, 5, 1, 1)), np.zeros((2, 4, 1, 1)), np.zeros(2))


@pytest.mark.parametrize("seed", SEEDS)
def test_fully_connected_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 2, 2))
    w = rng.standard_normal((5, 12, 1, 1))
    b = rng.standard_normal(5)
    out, cache = ops.fully_connected_forward(x, w, b)
    upstream = rng.standard_normal(out.shape)
    dx, dw, db = ops.fully_connected_backward(cache, upstream)
    scalar = lambda: float(np.sum(ops.fully_connected(x, w, b) * upstream))
    assert check_gradient(scalar, x, dx) < TOLERANCE
    assert check_gradient(scalar, w, dw) < TOLERANCE
    assert check_gradient(scalar, b, db) < TOLERANCE


# ==================== Max pooling ====================

def test_max_pool_example():
    assert ops.max_pool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)[0, 0, 0, 0] == 4.0


def test_max_pool_tie_routes_to_first_site():
    out, cache = ops.max_pool2d_forward(np.ones((1, 1, 2, 2)), 2, 2)
    assert out[0, 0, 0, 0] == 1.0
    grad = ops.max_pool2d_backward(cache, np.ones_like(out))
    np.testing.assert_array_equal(grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_max_pool_window_too_large():
    with pytest.raises(DimensionError):
        ops.max_pool2d(np.zeros((1, 1, 2, 2)), 3, 1)


@pytest.mark.parametrize("seed", SEEDS)
def test_max_pool_gradients(seed):
    rng = np.random.default_rng(seed)
    window = int(rng.choice([2, 3]))
    stride = int(rng.choice([1, 2]))
    # distinct values 0.01 apart: no +-h probe can change an argmax
    x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01
    out, cache = ops.max_pool2d_forward(x, window, stride)
    upstream = rng.standard_normal(out.shape)
    dx = ops.max_pool2d_backward(cache, upstream)
    scalar = lambda: float(np.sum(ops.max_pool2d(x, window, stride) * upstream))
    assert check_gradient(scalar, x, dx) < TOLERANCE


# ==================== Concat ====================

def test_concat_join_shape():
    out = ops.concat_channels(np.zeros((1, 128, 32, 32)), np.ones((1, 128, 32, 32)))
    assert out.shape == (1, 256, 32, 32)


def test_concat_with_empty_channels(rng):
    a = rng.standard_normal((1, 3, 4, 4))
    np.testing.assert_array_equal(ops.concat_channels(a, np.zeros((1, 0, 4, 4))), a)


def test_concat_height_mismatch():
    with pytest.raises(DimensionError) as info:
        ops.concat_channels(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 4)))
    assert info.value.axis == "height"


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 3, 4, 4))
    b = rng.standard_normal((2, int(rng.integers(1, 4)), 4, 4))
    out, cache = ops.concat_channels_forward([a, b])
    upstream = rng.standard_normal(out.shape)
    da, db = ops.concat_channels_backward(cache, upstream)
    scalar = lambda: float(np.sum(ops.concat_channels(a, b) * upstream))
    assert check_gradient(scalar, a, da) < TOLERANCE
    assert check_gradient(scalar, b, db) < TOLERANCE


# ==================== Losses ====================

def test_mse_identity_is_zero(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    assert ops.mse_loss(x, x.copy())[0] == 0.0


def test_mse_hand_sum():
    loss, _ = ops.mse_loss(np.ones((1, 2, 1, 1)), np.zeros((1, 2, 1, 1)))
    assert loss == 2.0


def test_mse_shard_divisor():
    pred, target = np.ones((1, 2, 1, 1)), np.zeros((1, 2, 1, 1))
    assert ops.mse_loss(pred, target, batch=4)[0] == 0.5


@pytest.mark.parametrize("seed", SEEDS)
def test_mse_gradients(seed):
    rng = np.random.default_rng(seed)
    pred = rng.standard_normal((3, 2, 4, 4))
    target = rng.standard_normal(pred.shape)
    _, grad = ops.mse_loss(pred, target)
    assert check_gradient(lambda: ops.mse_loss(pred, target)[0], pred, grad) < TOLERANCE


def test_softmax_uniform_logits():
    loss, _ = ops.softmax_cross_entropy(np.zeros((2, 5, 1, 1)), np.array([0, 3]))
    assert loss == pytest.approx(np.log(5.0))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_gradients(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 6, 1, 1)) * 3
    labels = rng.integers(0, 6, size=4)
    _, grad = ops.softmax_cross_entropy(logits, labels)
    scalar = lambda: ops.softmax_cross_entropy(logits, labels)[0]
    assert check_gradient(scalar, logits, grad) < TOLERANCE
