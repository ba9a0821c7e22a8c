"""
Sparse SIFT: a difference-of-Gaussians detector with Lowe-style descriptors,
and the grid encoding that turns a keypoint set into a dense feature map.

Coordinates follow image convention: x to the right, y downwards, angles
measured from the +x axis towards +y.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from engine.tensor import PRODUCTION_DTYPE, Tensor
from schemas.errors import DimensionError, InputValidationError
from schemas.feature_schemas import (
    SIFT_DESCRIPTOR_SIZE,
    SIFT_GRID_CHANNELS,
    FeatureMap,
    KeypointSet,
    grid_size,
)
from services.feature_extractors import as_gray_image

logger = logging.getLogger(__name__)

# base image sigma
SIFT_SIGMA = 1.6

# blur already present in the input
SIFT_INIT_SIGMA = 0.5

# sampled intervals per octave
SIFT_INTERVALS = 3

# threshold on |D| at the refined extremum, for images in [0, 1]
SIFT_CONTRAST_THRESHOLD = 0.03

# ratio of principal curvatures above which a keypoint is an edge
SIFT_EDGE_RATIO = 10.0

# width of border in which to ignore keypoints
SIFT_IMG_BORDER = 5

SIFT_MAX_INTERP_STEPS = 5

SIFT_ORI_HIST_BINS = 36
SIFT_ORI_SIG_FACTOR = 1.5
SIFT_ORI_RADIUS = 3 * SIFT_ORI_SIG_FACTOR
SIFT_ORI_PEAK_RATIO = 0.8

SIFT_DESCR_WIDTH = 4
SIFT_DESCR_HIST_BINS = 8
SIFT_DESCR_SCALE_FACTOR = 3.0
SIFT_DESCR_MAG_THRESHOLD = 0.2

SIFT_MIN_SIZE = 32


def normalize_descriptor(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unit-normalize, clamp entries at 0.2, renormalize.

    Returns:
        (clamped, final): the clamped intermediate (entries <= 0.2, norm <= 1)
        and the renormalized unit-length descriptor
    """
    raw = np.asarray(raw, dtype=np.float64)
    norm = np.linalg.norm(raw)
    if norm == 0:
        return np.zeros_like(raw), np.zeros_like(raw)
    clamped = np.minimum(raw / norm, SIFT_DESCR_MAG_THRESHOLD)
    return clamped, clamped / np.linalg.norm(clamped)


def wrap_angle(theta):
    """Map radians into [-pi, pi)."""
    return np.mod(np.asarray(theta) + np.pi, 2 * np.pi) - np.pi


class SiftDetector:
    """
    Difference-of-Gaussians keypoints with 4x4x8 descriptors.

    Octave 0 is the input resolution; each octave has ``intervals`` DoG levels
    searched for extrema.
    """

    def __init__(self, sigma: float = SIFT_SIGMA, intervals: int = SIFT_INTERVALS,
                 contrast_threshold: float = SIFT_CONTRAST_THRESHOLD,
                 edge_ratio: float = SIFT_EDGE_RATIO, border: int = SIFT_IMG_BORDER):
        self.sigma = sigma
        self.intervals = intervals
        self.contrast_threshold = contrast_threshold
        self.edge_ratio = edge_ratio
        self.border = border

    # ---------- scale space ----------

    def octave_count(self, height: int, width: int) -> int:
        return max(1, int(math.floor(math.log2(min(height, width)))) - 3)

    def build_gaussian_pyramid(self, image: np.ndarray) -> List[np.ndarray]:
        """One (intervals + 3, h, w) stack per octave."""
        k = 2.0 ** (1.0 / self.intervals)
        increments = [0.0]
        for index in range(1, self.intervals + 3):
            previous = self.sigma * k ** (index - 1)
            increments.append(math.sqrt((previous * k) ** 2 - previous ** 2))

        base = gaussian_filter(image, math.sqrt(self.sigma ** 2 - SIFT_INIT_SIGMA ** 2))
        pyramid = []
        for _ in range(self.octave_count(*image.shape)):
            levels = [base]
            for sigma in increments[1:]:
                levels.append(gaussian_filter(levels[-1], sigma))
            pyramid.append(np.stack(levels))
            base = levels[self.intervals][::2, ::2]
        return pyramid

    # ---------- detection ----------

    def _candidates(self, dog: np.ndarray) -> np.ndarray:
        """(level, y, x) of 3x3x3 extrema passing the contrast prefilter."""
        threshold = 0.5 * self.contrast_threshold / self.intervals
        is_max = (dog == maximum_filter(dog, size=3, mode="nearest")) & (dog > threshold)
        is_min = (dog == minimum_filter(dog, size=3, mode="nearest")) & (dog < -threshold)
        extrema = is_max | is_min
        extrema[0] = extrema[-1] = False
        b = self.border
        extrema[:, :b, :] = extrema[:, -b:, :] = False
        extrema[:, :, :b] = extrema[:, :, -b:] = False
        return np.argwhere(extrema)

    @staticmethod
    def _derivatives(dog: np.ndarray, level: int, y: int, x: int):
        cube = dog[level - 1:level + 2, y - 1:y + 2, x - 1:x + 2]
        center = cube[1, 1, 1]
        gradient = 0.5 * np.array([
            cube[1, 1, 2] - cube[1, 1, 0],
            cube[1, 2, 1] - cube[1, 0, 1],
            cube[2, 1, 1] - cube[0, 1, 1],
        ])
        dxx = cube[1, 1, 2] - 2 * center + cube[1, 1, 0]
        dyy = cube[1, 2, 1] - 2 * center + cube[1, 0, 1]
        dss = cube[2, 1, 1] - 2 * center + cube[0, 1, 1]
        dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        return center, gradient, hessian

    def _refine(self, dog: np.ndarray, level: int, y: int, x: int) -> Optional[Tuple[float, float, float]]:
        """Quadratic sub-pixel refinement; None if the extremum is rejected."""
        levels, height, width = dog.shape
        for _ in range(SIFT_MAX_INTERP_STEPS):
            center, gradient, hessian = self._derivatives(dog, level, y, x)
            try:
                offset = -np.linalg.solve(hessian, gradient)
            except np.linalg.LinAlgError:
                return None
            if np.all(np.abs(offset) < 0.5):
                break
            x += int(round(offset[0]))
            y += int(round(offset[1]))
            level += int(round(offset[2]))
            if (level < 1 or level > levels - 2 or y < self.border or y >= height - self.border
                    or x < self.border or x >= width - self.border):
                return None
        else:
            return None

        value = center + 0.5 * gradient.dot(offset)
        if abs(value) < self.contrast_threshold:
            return None
        trace = hessian[0, 0] + hessian[1, 1]
        det = hessian[0, 0] * hessian[1, 1] - hessian[0, 1] ** 2
        r = self.edge_ratio
        if det <= 0 or trace ** 2 * r >= (r + 1) ** 2 * det:
            return None
        return x + offset[0], y + offset[1], level + offset[2]

    # ---------- orientation and descriptor ----------

    @staticmethod
    def _gradients(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dx = np.zeros_like(image)
        dy = np.zeros_like(image)
        dx[:, 1:-1] = image[:, 2:] - image[:, :-2]
        dy[1:-1, :] = image[2:, :] - image[:-2, :]
        return np.hypot(dx, dy), np.arctan2(dy, dx)

    @staticmethod
    def _patch(shape, cx: float, cy: float, radius: int):
        rows, cols = np.mgrid[-radius:radius + 1, -radius:radius + 1]
        ys = int(round(cy)) + rows
        xs = int(round(cx)) + cols
        inside = (ys > 0) & (ys < shape[0] - 1) & (xs > 0) & (xs < shape[1] - 1)
        return rows[inside], cols[inside], ys[inside], xs[inside]

    def _orientations(self, magnitude, angle, cx: float, cy: float, octave_sigma: float) -> List[float]:
        sigma = SIFT_ORI_SIG_FACTOR * octave_sigma
        radius = int(round(SIFT_ORI_RADIUS * octave_sigma))
        rows, cols, ys, xs = self._patch(magnitude.shape, cx, cy, radius)
        weights = np.exp(-(rows ** 2 + cols ** 2) / (2 * sigma ** 2)) * magnitude[ys, xs]
        bins = np.round(np.mod(angle[ys, xs], 2 * np.pi) * SIFT_ORI_HIST_BINS / (2 * np.pi)).astype(np.int64)
        hist = np.bincount(bins % SIFT_ORI_HIST_BINS, weights=weights, minlength=SIFT_ORI_HIST_BINS)

        smooth = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
                  + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
        peak = smooth.max()
        if peak <= 0:
            return []
        left, right = np.roll(smooth, 1), np.roll(smooth, -1)
        result = []
        for index in np.flatnonzero((smooth > left) & (smooth > right) & (smooth >= SIFT_ORI_PEAK_RATIO * peak)):
            l, c, r = left[index], smooth[index], right[index]
            shift = 0.5 * (l - r) / (l - 2 * c + r)
            theta = (index + shift) * 2 * np.pi / SIFT_ORI_HIST_BINS
            result.append(float(wrap_angle(theta)))
        return result

    def _raw_descriptor(self, magnitude, angle, cx: float, cy: float, octave_sigma: float,
                        theta: float) -> np.ndarray:
        width = SIFT_DESCR_WIDTH
        bins = SIFT_DESCR_HIST_BINS
        hist_width = SIFT_DESCR_SCALE_FACTOR * octave_sigma
        radius = int(round(hist_width * math.sqrt(2) * (width + 1) * 0.5))
        radius = min(radius, int(math.hypot(*magnitude.shape)))
        rows, cols, ys, xs = self._patch(magnitude.shape, cx, cy, radius)

        cos_t, sin_t = math.cos(theta), math.sin(theta)
        col_rot = (cos_t * cols + sin_t * rows) / hist_width
        row_rot = (-sin_t * cols + cos_t * rows) / hist_width
        row_bin = row_rot + 0.5 * width - 0.5
        col_bin = col_rot + 0.5 * width - 0.5
        keep = (row_bin > -1) & (row_bin < width) & (col_bin > -1) & (col_bin < width)
        row_bin, col_bin, row_rot, col_rot = row_bin[keep], col_bin[keep], row_rot[keep], col_rot[keep]
        ys, xs = ys[keep], xs[keep]

        weight = np.exp(-(row_rot ** 2 + col_rot ** 2) / (2 * (0.5 * width) ** 2))
        value = weight * magnitude[ys, xs]
        orient_bin = np.mod(angle[ys, xs] - theta, 2 * np.pi) * bins / (2 * np.pi)

        r0, c0, o0 = np.floor(row_bin), np.floor(col_bin), np.floor(orient_bin)
        dr, dc, do = row_bin - r0, col_bin - c0, orient_bin - o0
        r0, c0, o0 = r0.astype(np.int64), c0.astype(np.int64), o0.astype(np.int64)

        # one cell of padding on each spatial side absorbs out-of-window spill
        hist = np.zeros((width + 2, width + 2, bins))
        for ri, wr in ((r0, 1 - dr), (r0 + 1, dr)):
            for ci, wc in ((c0, 1 - dc), (c0 + 1, dc)):
                for oi, wo in ((o0, 1 - do), (o0 + 1, do)):
                    np.add.at(hist, (ri + 1, ci + 1, oi % bins), value * wr * wc * wo)
        return hist[1:-1, 1:-1, :].reshape(-1)

    # ---------- public ----------

    def detect_and_describe(self, gray) -> Tuple[KeypointSet, np.ndarray]:
        """Keypoints with final descriptors, plus the raw (pre-normalization) descriptors."""
        image = as_gray_image(gray)
        height, width = image.shape
        if min(height, width) < SIFT_MIN_SIZE:
            axis = "height" if height < width else "width"
            raise DimensionError(axis, f"SIFT needs min(W, H) >= {SIFT_MIN_SIZE}, got {width}x{height}")

        records, raws = [], []
        for octave, gaussians in enumerate(self.build_gaussian_pyramid(image)):
            dog = gaussians[1:] - gaussians[:-1]
            step = 2 ** octave
            gradient_cache = {}
            for level, y, x in self._candidates(dog):
                refined = self._refine(dog, int(level), int(y), int(x))
                if refined is None:
                    continue
                fx, fy, fl = refined
                octave_sigma = self.sigma * 2.0 ** (fl / self.intervals)
                layer = int(np.clip(round(fl), 0, gaussians.shape[0] - 1))
                if layer not in gradient_cache:
                    gradient_cache[layer] = self._gradients(gaussians[layer])
                magnitude, angle = gradient_cache[layer]

                px, py = fx * step, fy * step
                if not (0 <= px < width and 0 <= py < height):
                    continue
                for theta in self._orientations(magnitude, angle, fx, fy, octave_sigma):
                    raw = self._raw_descriptor(magnitude, angle, fx, fy, octave_sigma, theta)
                    _, final = normalize_descriptor(raw)
                    records.append((px, py, octave_sigma * step, theta, final))
                    raws.append(raw)

        logger.debug("[SIFT] %dx%d image: %d keypoints", width, height, len(records))
        raw_matrix = np.stack(raws) if raws else np.zeros((0, SIFT_DESCRIPTOR_SIZE))
        return KeypointSet.from_records(records), raw_matrix


def sift_detect_describe(gray, detector: Optional[SiftDetector] = None) -> KeypointSet:
    return (detector or SiftDetector()).detect_and_describe(gray)[0]


def sift_grid_encode(keypoints: KeypointSet, image_size: Tuple[int, int], d: int = 4,
                     rng: Optional[np.random.Generator] = None) -> FeatureMap:
    """
    Place keypoints on a d x d pixel grid.

    Each occupied cell holds (descriptor, x mod d, y mod d, sin a, cos a, log s)
    of one keypoint; cells with several keypoints pick one with ``rng``,
    visiting cells in row-major order.

    Args:
        keypoints: Keypoints inside the image
        image_size: (W, H) of the source image
        d: Grid cell size in pixels
        rng: Generator used for multi-keypoint cells

    Returns:
        FeatureMap of shape (1, 133, ceil(H/d), ceil(W/d))
    """
    width, height = image_size
    bad = keypoints.out_of_bounds(image_size)
    if bad:
        listed = ", ".join(
            f"#{i} (x={keypoints.positions[i, 0]:.3f}, y={keypoints.positions[i, 1]:.3f})" for i in bad[:10]
        )
        raise InputValidationError(f"{len(bad)} keypoints outside the {width}x{height} image: {listed}")

    rows_n, cols_n = grid_size(height, d), grid_size(width, d)
    grid = np.zeros((SIFT_GRID_CHANNELS, rows_n, cols_n))

    cells = {}
    for index in range(len(keypoints)):
        x, y = keypoints.positions[index]
        cells.setdefault((int(y // d), int(x // d)), []).append(index)

    rng = rng or np.random.default_rng(0)
    for (row, col) in sorted(cells):
        members = cells[(row, col)]
        chosen = members[0] if len(members) == 1 else members[int(rng.integers(len(members)))]
        x, y = keypoints.positions[chosen]
        alpha = keypoints.orientations[chosen]
        grid[:SIFT_DESCRIPTOR_SIZE, row, col] = keypoints.descriptors[chosen]
        grid[SIFT_DESCRIPTOR_SIZE:, row, col] = (
            np.mod(x, d), np.mod(y, d), np.sin(alpha), np.cos(alpha), np.log(keypoints.scales[chosen])
        )

    return FeatureMap(
        tensor=Tensor(grid[None].astype(PRODUCTION_DTYPE)),
        extractor="sift_grid",
        cell=d,
        source_size=(width, height),
    )
