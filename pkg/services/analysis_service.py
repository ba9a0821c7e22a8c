"""
Feature-space analysis: perturbations, interpolation, fitted feature
distributions and random sampling.

Every function takes feature vectors of any shape and returns arrays of the
same shape; randomness always comes from a caller-owned generator.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, truncnorm

from schemas.errors import PerturbationError, UsageError
from schemas.feature_schemas import FeatureDistribution
from schemas.run_schemas import PerturbationKind, PerturbationSpec

logger = logging.getLogger(__name__)

DEFAULT_BINS = 64
DEFAULT_ALPHA = 2.0


def _vector(phi) -> np.ndarray:
    return np.asarray(phi, dtype=np.float64)


def binarize(phi) -> np.ndarray:
    """
    Keep signs, replace every non-zero magnitude by ||phi|| / sqrt(nnz).

    Raises:
        PerturbationError: phi is all zeros
    """
    v = _vector(phi)
    nonzero = v != 0
    count = int(nonzero.sum())
    if count == 0:
        raise PerturbationError("cannot binarize an all-zero feature vector")
    magnitude = np.linalg.norm(v) / np.sqrt(count)
    return np.sign(v) * magnitude


def dropout_random(phi, fraction: float = 0.5, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Zero floor(fraction * len) random entries and rescale back to the original norm."""
    if not 0.0 <= fraction <= 1.0:
        raise UsageError(f"fraction must be in [0, 1], got {fraction}")
    v = _vector(phi)
    rng = rng or np.random.default_rng(0)
    flat = v.reshape(-1).copy()
    dropped = int(np.floor(fraction * flat.size))
    if dropped:
        flat[rng.choice(flat.size, size=dropped, replace=False)] = 0.0
    survivors = np.linalg.norm(flat)
    if survivors == 0:
        raise PerturbationError("every surviving entry is zero; the norm cannot be restored")
    return (flat * (np.linalg.norm(v) / survivors)).reshape(v.shape)


def drop_least_then_binarize(phi, fraction: float = 0.5) -> np.ndarray:
    """Zero the floor(fraction * nnz) smallest-magnitude non-zeros (lowest index first on ties), then binarize."""
    if not 0.0 <= fraction <= 1.0:
        raise UsageError(f"fraction must be in [0, 1], got {fraction}")
    v = _vector(phi)
    flat = v.reshape(-1).copy()
    nonzero = np.flatnonzero(flat)
    if nonzero.size == 0:
        raise PerturbationError("cannot binarize an all-zero feature vector")
    dropped = int(np.floor(fraction * nonzero.size))
    order = nonzero[np.argsort(np.abs(flat[nonzero]), kind="stable")]
    flat[order[:dropped]] = 0.0
    if not np.any(flat):
        raise PerturbationError("dropping left no non-zero entries to binarize")
    out = binarize(flat) * (np.linalg.norm(v) / np.linalg.norm(flat))
    return out.reshape(v.shape)


def _top_k_mask(v: np.ndarray, k: int) -> np.ndarray:
    flat = v.reshape(-1)
    if not 1 <= k <= flat.size:
        raise UsageError(f"k must be in [1, {flat.size}], got {k}")
    mask = np.zeros(flat.size, dtype=bool)
    mask[np.argsort(-flat, kind="stable")[:k]] = True
    return mask.reshape(v.shape)


def keep_top_k(phi, k: int = 5) -> np.ndarray:
    """Keep the k largest activations, zero the rest."""
    v = _vector(phi)
    return np.where(_top_k_mask(v, k), v, 0.0)


def zero_top_k(phi, k: int = 5) -> np.ndarray:
    """Zero the k largest activations."""
    v = _vector(phi)
    return np.where(_top_k_mask(v, k), 0.0, v)


def perturb(phi, spec: PerturbationSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Dispatch one PerturbationSpec."""
    kind = spec.kind
    if kind == PerturbationKind.BINARIZE:
        return binarize(phi)
    if kind == PerturbationKind.DROPOUT_RANDOM:
        return dropout_random(phi, spec.fraction, rng or np.random.default_rng(spec.seed))
    if kind == PerturbationKind.DROP_LEAST_THEN_BINARIZE:
        return drop_least_then_binarize(phi, spec.fraction)
    if kind == PerturbationKind.KEEP_TOP_K:
        return keep_top_k(phi, spec.k)
    return zero_top_k(phi, spec.k)


def interpolate(phi1, phi2, steps: int) -> List[np.ndarray]:
    """(1 - t) * phi1 + t * phi2 at t = i / (steps - 1); endpoints are the inputs themselves."""
    if steps < 2:
        raise UsageError(f"interpolation needs at least 2 steps, got {steps}")
    a, b = _vector(phi1), _vector(phi2)
    if a.shape != b.shape:
        raise UsageError(f"cannot interpolate between shapes {a.shape} and {b.shape}")
    frames = []
    for i in range(steps):
        if i == 0:
            frames.append(a.copy())
        elif i == steps - 1:
            frames.append(b.copy())
        else:
            t = i / (steps - 1)
            frames.append((1.0 - t) * a + t * b)
    return frames


def _fit_truncated_normal(values: np.ndarray) -> Tuple[float, float]:
    """Maximum-likelihood (mean, std) of a normal distribution truncated below at 0."""
    moments = float(values.mean()), float(values.std())
    if moments[1] == 0:
        return moments[0], 1e-6
    # work in units of the sample std so the tolerances are scale free
    scale = moments[1]
    z = values / scale
    n, s1, s2 = z.size, float(z.sum()), float((z * z).sum())

    def negative_log_likelihood(theta):
        mu, log_sigma = theta
        sigma = np.exp(log_sigma)
        quadratic = (s2 - 2.0 * mu * s1 + n * mu * mu) / (2.0 * sigma * sigma)
        return log_sigma + quadratic / n + norm.logsf(0.0, loc=mu, scale=sigma)

    result = minimize(negative_log_likelihood, x0=[moments[0] / scale, 0.0], method="Nelder-Mead",
                      options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000})
    mean, std = float(result.x[0] * scale), float(np.exp(result.x[1]) * scale)
    if not (result.success and np.isfinite(mean) and np.isfinite(std) and std > 0):
        logger.warning("[Analysis] truncated Gaussian fit did not converge (%s), using sample moments",
                       result.message)
        return moments
    return mean, std


def fit_distribution(features: Sequence, mode: str = "histogram", bins: int = DEFAULT_BINS) -> FeatureDistribution:
    """
    Model every feature dimension over a set of feature vectors.

    Args:
        features: Feature vectors of one common shape (C, H, W) or (1, C, H, W)
        mode: 'histogram' (per-dimension equal-width bins over the observed
            non-zero range) or 'trunc_gaussian' (one Gaussian truncated at 0,
            fitted by maximum likelihood to all pooled positive values)
        bins: Histogram bins per dimension

    Returns:
        FeatureDistribution with per-dimension zero counts

    Raises:
        UsageError: Fewer than 2 vectors, mixed shapes or an unknown mode
    """
    if len(features) == 0:
        raise UsageError("cannot fit a distribution to an empty feature set")
    arrays = [np.asarray(f, dtype=np.float64) for f in features]
    shape = arrays[0].shape[-3:] if arrays[0].ndim >= 3 else (arrays[0].size, 1, 1)
    if any(a.size != arrays[0].size for a in arrays):
        raise UsageError("all feature vectors must have the same shape")
    if len(arrays) < 2:
        raise UsageError(f"fitting needs at least 2 feature vectors, got {len(arrays)}")
    samples = np.stack([a.reshape(-1) for a in arrays])
    count, dims = samples.shape
    zero_counts = (samples == 0).sum(axis=0).astype(np.int64)

    if mode == "histogram":
        if bins < 1:
            raise UsageError(f"bins must be positive, got {bins}")
        nonzero = samples != 0
        low = np.where(nonzero, samples, np.inf).min(axis=0)
        high = np.where(nonzero, samples, -np.inf).max(axis=0)
        empty = ~np.isfinite(low)
        low[empty], high[empty] = 0.0, 0.0
        # a constant dimension still gets one bin of non-zero width
        width = np.where(high > low, high - low, np.maximum(np.abs(low) * 1e-6, 1e-12))
        edges = low[:, None] + width[:, None] * np.linspace(0.0, 1.0, bins + 1)[None, :]

        position = (samples - low[None, :]) / width[None, :] * bins
        index = np.clip(np.floor(position).astype(np.int64), 0, bins - 1)
        flat_index = (np.arange(dims)[None, :] * bins + index)[nonzero]
        counts = np.bincount(flat_index, minlength=dims * bins).reshape(dims, bins)
        dist = FeatureDistribution(
            mode="histogram", feature_shape=tuple(shape), sample_count=count,
            zero_counts=zero_counts, bin_edges=edges, counts=counts.astype(np.int64),
        )
    elif mode == "trunc_gaussian":
        positive = samples[samples > 0]
        if positive.size < 2:
            raise UsageError("trunc_gaussian needs at least 2 positive feature values")
        mean, std = _fit_truncated_normal(positive)
        dist = FeatureDistribution(
            mode="trunc_gaussian", feature_shape=tuple(shape), sample_count=count,
            zero_counts=zero_counts, mean=mean, std=std,
            lower=0.0,
        )
    else:
        raise UsageError(f"unknown distribution mode '{mode}'")
    logger.info("[Analysis] fitted %s distribution over %d vectors x %d dims", mode, count, dims)
    return dist


def sample_features(dist: FeatureDistribution, alpha: float = DEFAULT_ALPHA,
                    rng: Optional[np.random.Generator] = None, count: int = 1) -> np.ndarray:
    """
    Draw ``count`` random feature vectors with the fitted sparsity.

    Each dimension is 0 with its empirical zero fraction, otherwise drawn
    uniformly within a histogram bin chosen by count (or from the truncated
    Gaussian); the vector is then scaled by ``alpha``.

    Returns:
        (count, C, H, W) float64 array
    """
    rng = rng or np.random.default_rng(0)
    dims = dist.dimensions
    keep = rng.random((count, dims)) >= dist.zero_fraction[None, :]

    if dist.mode == "histogram":
        totals = dist.counts.sum(axis=1)
        cdf = np.cumsum(dist.counts, axis=1) / np.maximum(totals, 1)[:, None]
        u = rng.random((count, dims))
        chosen = np.empty((count, dims), dtype=np.int64)
        for d in range(dims):
            chosen[:, d] = np.searchsorted(cdf[d], u[:, d], side="right")
        chosen = np.minimum(chosen, dist.counts.shape[1] - 1)
        columns = np.arange(dims)[None, :]
        lower = dist.bin_edges[columns, chosen]
        upper = dist.bin_edges[columns, chosen + 1]
        values = lower + (upper - lower) * rng.random((count, dims))
        # dimensions that were always zero have no non-zero mass
        keep &= (totals > 0)[None, :]
    else:
        a = (dist.lower - dist.mean) / dist.std
        values = truncnorm.rvs(a, np.inf, loc=dist.mean, scale=dist.std, size=(count, dims), random_state=rng)

    out = np.where(keep, values, 0.0) * alpha
    return out.reshape((count,) + tuple(dist.feature_shape))


def activate_single_unit(feature_shape: Tuple[int, int, int], unit: int, value: float = 1.0) -> np.ndarray:
    """(1, C, H, W) vector that is zero except flat index ``unit`` set to ``value``."""
    size = int(np.prod(feature_shape))
    if not 0 <= unit < size:
        raise UsageError(f"unit must be in [0, {size}), got {unit}")
    out = np.zeros(size)
    out[unit] = value
    return out.reshape((1,) + tuple(feature_shape))


def norm_ratio(original, perturbed) -> float:
    base = np.linalg.norm(_vector(original))
    return float(np.linalg.norm(_vector(perturbed)) / base) if base else float("nan")
