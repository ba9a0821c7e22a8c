"""
Grayscale conversion and the dense shallow extractors (HOG and LBP).

Both extractors take a single grayscale image, either a (1, 1, H, W) Tensor or
a 2-D array with values in [0, 1], and return a FeatureMap of cell
histograms. Internal arithmetic is float64; the stored tensor is float32.
"""
import logging
import numpy as np

from engine.tensor import PRODUCTION_DTYPE, Tensor
from schemas.errors import DimensionError
from schemas.feature_schemas import LBP_CHANNELS, FeatureMap, grid_size

logger = logging.getLogger(__name__)

# ITU-R BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

HOG_ORIENTATIONS = 18
HOG_TRUNCATION = 0.2
HOG_EPS = 1e-4
HOG_TEXTURE_SCALE = 0.2357

# clockwise from the top-left; bit b of the pattern belongs to LBP_NEIGHBOURS[b]
LBP_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
LBP_UNIFORM_BUCKET = 56
LBP_OTHER_BUCKET = 57


def to_grayscale(image) -> Tensor:
    """(B, 3, H, W) RGB in [0, 1] to (B, 1, H, W) luma."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 4:
        raise DimensionError("rank", f"expected (B, 3, H, W), got {data.shape}")
    if data.shape[1] != 3:
        raise DimensionError("channels", f"expected 3 color channels, got {data.shape[1]}")
    r, g, b = LUMA_WEIGHTS
    gray = r * data[:, 0:1] + g * data[:, 1:2] + b * data[:, 2:3]
    return Tensor(gray.astype(data.dtype, copy=False))


def as_gray_image(gray) -> np.ndarray:
    data = gray.data if isinstance(gray, Tensor) else np.asarray(gray)
    if data.ndim == 4:
        if data.shape[0] != 1 or data.shape[1] != 1:
            raise DimensionError("channels", f"expected one grayscale image (1, 1, H, W), got {data.shape}")
        data = data[0, 0]
    if data.ndim != 2:
        raise DimensionError("rank", f"expected a 2-D grayscale image, got {data.shape}")
    return np.asarray(data, dtype=np.float64)


# ==================== HOG ====================

def _orientation_histograms(image: np.ndarray, cell: int) -> np.ndarray:
    """(cells_y, cells_x, 18) gradient-magnitude histograms with bilinear binning."""
    height, width = image.shape
    cells_y, cells_x = grid_size(height, cell), grid_size(width, cell)

    dx = np.zeros_like(image)
    dy = np.zeros_like(image)
    dx[1:-1, 1:-1] = image[1:-1, 2:] - image[1:-1, :-2]
    dy[1:-1, 1:-1] = image[2:, 1:-1] - image[:-2, 1:-1]
    magnitude = np.hypot(dx, dy)

    angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    position = angle / (2 * np.pi / HOG_ORIENTATIONS)
    base = np.floor(position)
    orient_hi = position - base
    orient_bins = (base.astype(np.int64) % HOG_ORIENTATIONS,
                   (base.astype(np.int64) + 1) % HOG_ORIENTATIONS)
    orient_weights = (1.0 - orient_hi, orient_hi)

    ys, xs = np.mgrid[0:height, 0:width]
    yp = (ys + 0.5) / cell - 0.5
    xp = (xs + 0.5) / cell - 0.5
    iy = np.floor(yp).astype(np.int64)
    ix = np.floor(xp).astype(np.int64)
    vy = yp - iy
    vx = xp - ix

    size = cells_y * cells_x * HOG_ORIENTATIONS
    hist = np.zeros(size)
    for cy, wy in ((iy, 1.0 - vy), (iy + 1, vy)):
        for cx, wx in ((ix, 1.0 - vx), (ix + 1, vx)):
            inside = (cy >= 0) & (cy < cells_y) & (cx >= 0) & (cx < cells_x)
            spatial = wy * wx * magnitude
            for bins, wo in zip(orient_bins, orient_weights):
                index = (cy * cells_x + cx) * HOG_ORIENTATIONS + bins
                hist += np.bincount(index[inside], weights=(spatial * wo)[inside], minlength=size)
    return hist.reshape(cells_y, cells_x, HOG_ORIENTATIONS)


def _block_normalizers(hist: np.ndarray) -> np.ndarray:
    """(4, cells_y, cells_x) inverse norms of the four 2x2 blocks touching each cell."""
    half = HOG_ORIENTATIONS // 2
    energy = np.sum((hist[..., :half] + hist[..., half:]) ** 2, axis=-1)
    padded = np.pad(energy, 1)
    blocks = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
    cells_y, cells_x = energy.shape
    quadrants = (
        blocks[1:, 1:],                      # cell is the top-left of its block
        blocks[:cells_y, 1:],                # bottom-left
        blocks[1:, :cells_x],                # top-right
        blocks[:cells_y, :cells_x],          # bottom-right
    )
    return np.stack([1.0 / np.sqrt(q + HOG_EPS) for q in quadrants])


def hog_features_from_histograms(hist: np.ndarray) -> np.ndarray:
    """(31, cells_y, cells_x): 18 signed, 9 unsigned, 4 texture channels."""
    half = HOG_ORIENTATIONS // 2
    normalizers = _block_normalizers(hist)
    unsigned = hist[..., :half] + hist[..., half:]

    signed_out = np.zeros(hist.shape)
    unsigned_out = np.zeros(unsigned.shape)
    texture = np.zeros((4,) + hist.shape[:2])
    for k, norm in enumerate(normalizers):
        clipped = np.minimum(hist * norm[..., None], HOG_TRUNCATION)
        signed_out += 0.5 * clipped
        unsigned_out += 0.5 * np.minimum(unsigned * norm[..., None], HOG_TRUNCATION)
        texture[k] = HOG_TEXTURE_SCALE * clipped.sum(axis=-1)

    features = np.concatenate([signed_out, unsigned_out], axis=-1).transpose(2, 0, 1)
    return np.concatenate([features, texture], axis=0)


def hog_extract(gray, cell: int = 8) -> FeatureMap:
    """
    Felzenszwalb HOG: 31 channels per cell.

    Args:
        gray: One grayscale image
        cell: Cell size in pixels

    Returns:
        FeatureMap of shape (1, 31, ceil(H/cell), ceil(W/cell))
    """
    image = as_gray_image(gray)
    height, width = image.shape
    if height < 2 * cell:
        raise DimensionError("height", f"image height {height} < 2 cells of {cell}")
    if width < 2 * cell:
        raise DimensionError("width", f"image width {width} < 2 cells of {cell}")

    features = hog_features_from_histograms(_orientation_histograms(image, cell))
    return FeatureMap(
        tensor=Tensor(features[None].astype(PRODUCTION_DTYPE)),
        extractor="hog",
        cell=cell,
        source_size=(width, height),
    )


# ==================== LBP ====================

def _build_lbp_table() -> np.ndarray:
    """Map each 8-bit pattern to one of 58 buckets."""
    table = np.full(256, LBP_OTHER_BUCKET, dtype=np.int64)
    for code in range(256):
        bits = [(code >> b) & 1 for b in range(8)]
        if code in (0, 255):
            table[code] = LBP_UNIFORM_BUCKET
            continue
        transitions = sum(bits[b] != bits[(b + 1) % 8] for b in range(8))
        if transitions != 2:
            continue
        run_length = sum(bits)
        start = next(b for b in range(8) if bits[b] == 1 and bits[(b - 1) % 8] == 0)
        table[code] = start * 7 + (run_length - 1)
    return table


LBP_TABLE = _build_lbp_table()


def lbp_codes(gray) -> np.ndarray:
    """Per-pixel 8-bit patterns; a bit is set iff that neighbour is strictly brighter."""
    image = as_gray_image(gray)
    height, width = image.shape
    padded = np.pad(image, 1)
    codes = np.zeros((height, width), dtype=np.int64)
    for bit, (dy, dx) in enumerate(LBP_NEIGHBOURS):
        neighbour = padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        codes |= (neighbour > image).astype(np.int64) << bit
    return codes


def lbp_extract(gray, cell: int = 16, normalize: bool = False) -> FeatureMap:
    """
    Uniform LBP histograms over cell x cell blocks.

    Args:
        gray: One grayscale image
        cell: Cell size in pixels
        normalize: Divide counts by the cell area

    Returns:
        FeatureMap of shape (1, 58, ceil(H/cell), ceil(W/cell))
    """
    image = as_gray_image(gray)
    height, width = image.shape
    if height < cell:
        raise DimensionError("height", f"image height {height} < cell {cell}")
    if width < cell:
        raise DimensionError("width", f"image width {width} < cell {cell}")

    buckets = LBP_TABLE[lbp_codes(image)]
    cells_y, cells_x = grid_size(height, cell), grid_size(width, cell)
    ys, xs = np.mgrid[0:height, 0:width]
    index = ((ys // cell) * cells_x + (xs // cell)) * LBP_CHANNELS + buckets
    counts = np.bincount(index.ravel(), minlength=cells_y * cells_x * LBP_CHANNELS)
    hist = counts.reshape(cells_y, cells_x, LBP_CHANNELS).transpose(2, 0, 1).astype(np.float64)
    if normalize:
        hist /= cell * cell
    return FeatureMap(
        tensor=Tensor(hist[None].astype(PRODUCTION_DTYPE)),
        extractor="lbp",
        cell=cell,
        source_size=(width, height),
    )
