"""
Central-difference gradient verification.

``numerical_gradient`` checks a single kernel; ``finite_difference_check``
checks a whole Network in 64-bit, skipping entries whose +-h probes land in a
different piecewise-linear region (a leaky ReLU sign flip or a max-pool argmax
change) than the unperturbed pass.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from engine import ops
from engine.graph import Network
from engine.tensor import VERIFICATION_DTYPE, Tensor
from schemas.errors import UsageError

logger = logging.getLogger(__name__)


def relative_error(analytic, numeric, floor: float = 1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn()
        flat[i] = original - h
        minus = fn()
        flat[i] = original
        out[i] = (plus - minus) / (2 * h)
    return grad


def check_gradient(fn: Callable[[], float], array: np.ndarray, analytic: np.ndarray,
                   h: float = 1e-5) -> float:
    """Max relative error between ``analytic`` and the central difference of ``fn``."""
    numeric = numerical_gradient(fn, array, h)
    return float(relative_error(analytic, numeric).max(initial=0.0))


@dataclass
class GradientFailure:
    tensor: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradientCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    tolerance: float = 1e-4
    failures: List[GradientFailure] = field(default_factory=list)
    per_tensor: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures and self.checked > 0

    def summary(self) -> str:
        return (
            f"checked={self.checked} skipped={self.skipped} "
            f"max_rel_error={self.max_rel_error:.3e} failures={len(self.failures)}"
        )


def finite_difference_check(network: Network, x, h: float = 1e-5, tolerance: float = 1e-4,
                            target=None, max_entries_per_tensor: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None,
                            include_input: bool = True) -> GradientCheckReport:
    """
    Compare backprop against central differences over parameters and input.

    Args:
        network: Graph to verify; a float64 copy is checked, the original is untouched
        x: Network input
        h: Probe step
        tolerance: Maximum accepted relative error
        target: If given the scalar is mse_loss(output, target); otherwise the
            output itself must hold exactly one value
        max_entries_per_tensor: Check a random subset of this size per tensor
        rng: Generator for the subset choice

    Returns:
        GradientCheckReport
    """
    net = network.astype(VERIFICATION_DTYPE)
    data = np.array(x.data if isinstance(x, Tensor) else x, dtype=VERIFICATION_DTYPE)
    if target is not None:
        target = np.asarray(target.data if isinstance(target, Tensor) else target,
                            dtype=VERIFICATION_DTYPE)
    rng = rng or np.random.default_rng(0)

    def scalar_and_grad():
        out = net.forward(data).data
        if target is not None:
            return ops.mse_loss(out, target)
        if out.size != 1:
            raise UsageError(
                f"gradient check needs a scalar output or a target; '{net.spec.name}' outputs {out.shape}"
            )
        return float(out.reshape(())), np.ones_like(out)

    net.zero_grad()
    _, grad_out = scalar_and_grad()
    baseline_signature = net.activation_signature()
    input_grad = net.backward(grad_out)
    analytic = dict(net.gradients())

    probes = {name: tensor.data for name, tensor in net.parameters.items()}
    if include_input:
        probes["input"] = data
        analytic["input"] = input_grad

    def same_region() -> bool:
        return all(np.array_equal(a, b) for a, b in zip(baseline_signature, net.activation_signature()))

    report = GradientCheckReport(tolerance=tolerance)
    for name, array in probes.items():
        flat = array.reshape(-1)
        grad = analytic[name].reshape(-1)
        if max_entries_per_tensor is not None and flat.size > max_entries_per_tensor:
            entries = np.sort(rng.choice(flat.size, size=max_entries_per_tensor, replace=False))
        else:
            entries = np.arange(flat.size)

        worst = 0.0
        for i in entries:
            original = flat[i]
            flat[i] = original + h
            plus = scalar_and_grad()[0]
            plus_ok = same_region()
            flat[i] = original - h
            minus = scalar_and_grad()[0]
            minus_ok = same_region()
            flat[i] = original
            if not (plus_ok and minus_ok):
                report.skipped += 1
                continue
            numeric = (plus - minus) / (2 * h)
            error = float(relative_error(grad[i], numeric))
            report.checked += 1
            worst = max(worst, error)
            if error > tolerance:
                report.failures.append(GradientFailure(
                    name, np.unravel_index(int(i), array.shape), float(grad[i]), numeric, error
                ))
        report.per_tensor[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)

    logger.info("[GradCheck] %s: %s", net.spec.name, report.summary())
    return report
