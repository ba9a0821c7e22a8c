"""Dense 4-D tensor with an optional gradient buffer."""
from typing import Optional, Sequence

import numpy as np

from schemas.errors import DimensionError

PRODUCTION_DTYPE = np.float32
VERIFICATION_DTYPE = np.float64


class Tensor:
    """
    A (batch, channels, height, width) array.

    Values are treated as immutable after construction; only optimizer updates
    write into ``data`` in place. ``grad`` is allocated on first accumulation.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad: Optional[np.ndarray] = None, dtype=None):
        array = np.ascontiguousarray(data, dtype=dtype)
        if array.dtype.kind != "f":
            array = array.astype(PRODUCTION_DTYPE)
        if array.ndim != 4:
            raise DimensionError("rank", f"expected 4 dimensions, got shape {array.shape}")
        if grad is not None and np.shape(grad) != array.shape:
            raise DimensionError("grad", f"grad shape {np.shape(grad)} != data shape {array.shape}")
        self.data = array
        self.grad = None if grad is None else np.ascontiguousarray(grad, dtype=array.dtype)

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype=PRODUCTION_DTYPE) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError("grad", f"{grad.shape} != {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"
