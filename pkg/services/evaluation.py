"""Normalized reconstruction error and its reference baselines."""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from schemas.errors import DimensionError, MetricError
from utilities.imaging import resize_bilinear

logger = logging.getLogger(__name__)

EXACT_PAIR_LIMIT = 512
SAMPLED_PAIRS_PER_IMAGE = 512


def _flatten(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[0], -1)


def pairwise_normalizer(targets: np.ndarray, seed: int = 0) -> float:
    """
    Mean Euclidean distance between test images.

    All unordered pairs up to 512 images; above that 512 * N seeded random
    pairs of distinct images.

    Raises:
        MetricError: Fewer than 2 images, or all images identical
    """
    flat = _flatten(targets)
    count = flat.shape[0]
    if count < 2:
        raise MetricError(f"the normalized error needs at least 2 test images, got {count}")
    if count <= EXACT_PAIR_LIMIT:
        normalizer = float(pdist(flat).mean())
    else:
        rng = np.random.default_rng(seed)
        pairs = SAMPLED_PAIRS_PER_IMAGE * count
        first = rng.integers(count, size=pairs)
        second = (first + rng.integers(1, count, size=pairs)) % count
        total = 0.0
        for start in range(0, pairs, 4096):
            a, b = first[start:start + 4096], second[start:start + 4096]
            total += float(np.linalg.norm(flat[a] - flat[b], axis=1).sum())
        normalizer = total / pairs
    if normalizer == 0.0:
        raise MetricError("all test images are identical; the mean pairwise distance is 0")
    return normalizer


def match_size(reconstructions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Bilinearly upsample reconstructions to the target resolution."""
    if reconstructions.shape[0] != targets.shape[0]:
        raise DimensionError("batch", f"{reconstructions.shape[0]} reconstructions for {targets.shape[0]} targets")
    if reconstructions.shape[1:] == targets.shape[1:]:
        return reconstructions
    size = (targets.shape[3], targets.shape[2])
    return np.stack([resize_bilinear(r, size) for r in reconstructions])


def per_image_errors(reconstructions: np.ndarray, targets: np.ndarray,
                     normalizer: Optional[float] = None, seed: int = 0) -> np.ndarray:
    """||x_i - f(phi_i)|| / N for every test image."""
    if normalizer is None:
        normalizer = pairwise_normalizer(targets, seed)
    diff = _flatten(match_size(reconstructions, targets)) - _flatten(targets)
    return np.linalg.norm(diff, axis=1) / normalizer


def normalized_error(reconstructions: np.ndarray, targets: np.ndarray, seed: int = 0) -> float:
    """
    Mean reconstruction distance divided by the mean pairwise test distance.

    Args:
        reconstructions: (N, 3, h, w) decoder outputs in [0, 1]
        targets: (N, 3, H, W) test images in [0, 1]
        seed: Seed of the sampled normalizer for more than 512 images

    Returns:
        The normalized error; 0 for a perfect model
    """
    return float(per_image_errors(reconstructions, targets, seed=seed).mean())


def baseline_reconstructions(kind: str, targets: np.ndarray) -> np.ndarray:
    """'identity' returns the targets, 'mean' the test-set mean image for every sample."""
    if kind == "identity":
        return np.array(targets, copy=True)
    if kind == "mean":
        mean = np.asarray(targets, dtype=np.float64).mean(axis=0, keepdims=True)
        return np.repeat(mean, targets.shape[0], axis=0)
    raise MetricError(f"unknown baseline '{kind}'")


def evaluate(reconstructions: np.ndarray, targets: np.ndarray, seed: int = 0) -> Tuple[float, np.ndarray]:
    errors = per_image_errors(reconstructions, targets, seed=seed)
    logger.info("[Eval] normalized error %.4f over %d images", errors.mean(), len(errors))
    return float(errors.mean()), errors
