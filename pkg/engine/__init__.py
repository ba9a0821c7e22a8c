"""Tensor type, layer kernels, computation graph and gradient verification."""
from .tensor import PRODUCTION_DTYPE, VERIFICATION_DTYPE, Tensor
from .ops import (
    ConvCache,
    concat_channels,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    fully_connected,
    leaky_relu,
    max_pool2d,
    mse_loss,
    softmax_cross_entropy,
    upconv2d,
    upsample2x_zero_stuff,
)
from .graph import Network, OpNode
from .gradcheck import (
    GradientCheckReport,
    check_gradient,
    finite_difference_check,
    numerical_gradient,
)

__all__ = [
    "PRODUCTION_DTYPE",
    "VERIFICATION_DTYPE",
    "Tensor",
    "ConvCache",
    "concat_channels",
    "conv2d",
    "conv2d_backward",
    "conv2d_forward",
    "fully_connected",
    "leaky_relu",
    "max_pool2d",
    "mse_loss",
    "softmax_cross_entropy",
    "upconv2d",
    "upsample2x_zero_stuff",
    "Network",
    "OpNode",
    "GradientCheckReport",
    "check_gradient",
    "finite_difference_check",
    "numerical_gradient",
]
