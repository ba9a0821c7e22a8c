"""Image decode/encode, bilinear resizing and montage layout on (C, H, W) float arrays."""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".ppm", ".pgm", ".jpg", ".jpeg")
GUTTER = 4

PathLike = Union[str, Path]


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


def load_image(path: PathLike, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    Decode an image to (3, H, W) float32 in [0, 1].

    Args:
        path: PNG, PPM or JPEG file
        size: Optional (W, H) for bilinear resampling

    Raises:
        OSError: The file cannot be decoded
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if size is not None and rgb.size != tuple(size):
            rgb = rgb.resize(tuple(size), Image.Resampling.BILINEAR)
        array = np.asarray(rgb, dtype=np.float32) / 255.0
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(C, H, W) in [0, 1] to (H, W, C) bytes."""
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(path: PathLike, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(image)
    if pixels.shape[2] == 1:
        Image.fromarray(pixels[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(pixels, mode="RGB").save(path)


def resize_bilinear(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Resize each channel of a (C, H, W) float array to (W, H) in 32-bit float mode."""
    width, height = size
    if image.shape[1:] == (height, width):
        return np.asarray(image, dtype=np.float32)
    channels = [
        np.asarray(Image.fromarray(np.asarray(c, dtype=np.float32), mode="F").resize(
            (width, height), Image.Resampling.BILINEAR
        ))
        for c in image
    ]
    return np.stack(channels).astype(np.float32)


def grid(rows: Sequence[Sequence[np.ndarray]], gutter: int = GUTTER) -> np.ndarray:
    """Lay out equally sized (C, H, W) cells in rows separated by black gutters."""
    first = rows[0][0]
    channels, height, width = first.shape
    columns = max(len(row) for row in rows)
    out = np.zeros(
        (channels, len(rows) * height + (len(rows) - 1) * gutter,
         columns * width + (columns - 1) * gutter),
        dtype=np.float32,
    )
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            top = r * (height + gutter)
            left = c * (width + gutter)
            out[:, top:top + height, left:left + width] = np.clip(cell, 0.0, 1.0)
    return out


def montage(pairs: List[Tuple[np.ndarray, np.ndarray]], gutter: int = GUTTER) -> np.ndarray:
    """One row per (input, reconstruction) pair; width is 2W + gutter."""
    return grid([[a, b] for a, b in pairs], gutter)
