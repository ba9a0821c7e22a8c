"""Image corpus loading and the deterministic train/test split."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from schemas.errors import DatasetError
from schemas.run_schemas import DatasetConfig
from schemas.settings import get_settings
from utilities.imaging import is_image_file, load_image

logger = logging.getLogger(__name__)

MIN_IMAGES = 4
MIN_TEST_IMAGES = 2


@dataclass
class ImageSet:
    """Decoded images with their class labels (immediate sub-directory names)."""
    names: List[str]
    images: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def size(self) -> Tuple[int, int]:
        """(W, H)"""
        return self.images.shape[3], self.images.shape[2]

    def subset(self, indices) -> "ImageSet":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageSet(
            names=[self.names[i] for i in indices],
            images=self.images[indices],
            labels=self.labels[indices],
            class_names=self.class_names,
        )


def list_images(image_dir: Path) -> List[Path]:
    """Image files directly in ``image_dir`` or one level below, sorted."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise DatasetError(f"image directory '{image_dir}' does not exist")
    files = [p for p in image_dir.iterdir() if is_image_file(p)]
    for sub in sorted(p for p in image_dir.iterdir() if p.is_dir()):
        files.extend(p for p in sub.iterdir() if is_image_file(p))
    return sorted(files, key=lambda p: p.relative_to(image_dir).as_posix())


def _decode(path: Path, size: Tuple[int, int]) -> Optional[np.ndarray]:
    try:
        return load_image(path, size)
    except (OSError, ValueError) as e:
        logger.warning("[Dataset] skipping %s: %s", path, e)
        return None


def load_images(paths: List[Path], root: Path, size: Tuple[int, int]) -> ImageSet:
    """Decode ``paths`` in parallel; undecodable files are skipped with a warning."""
    with ThreadPoolExecutor(max_workers=get_settings().threads) as pool:
        decoded = list(pool.map(lambda p: _decode(p, size), paths))

    kept = [(p, img) for p, img in zip(paths, decoded) if img is not None]
    relative = [p.relative_to(root) for p, _ in kept]
    class_of = [r.parts[0] if len(r.parts) > 1 else "" for r in relative]
    class_names = sorted(set(class_of))
    lookup = {name: i for i, name in enumerate(class_names)}
    images = np.stack([img for _, img in kept]) if kept else np.zeros((0, 3, size[1], size[0]), np.float32)
    return ImageSet(
        names=[r.as_posix() for r in relative],
        images=images,
        labels=np.array([lookup[c] for c in class_of], dtype=np.int64),
        class_names=class_names,
    )


def split_indices(count: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded permutation split; the test side always keeps at least two images."""
    n_train = min(int(round(fraction * count)), count - MIN_TEST_IMAGES)
    if n_train < 1:
        raise DatasetError(f"{count} images cannot be split into train and a test set of {MIN_TEST_IMAGES}")
    order = np.random.default_rng(seed).permutation(count)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def load_dataset(cfg: DatasetConfig) -> Tuple[ImageSet, ImageSet]:
    """
    Decode, resize and split the corpus.

    Args:
        cfg: Dataset configuration

    Returns:
        (train, test) image sets with values in [0, 1]

    Raises:
        DatasetError: Fewer than 4 usable images
    """
    paths = list_images(cfg.image_dir)
    if cfg.max_images is not None:
        paths = paths[:cfg.max_images]
    images = load_images(paths, Path(cfg.image_dir), tuple(cfg.target_size))
    if len(images) < MIN_IMAGES:
        raise DatasetError(f"'{cfg.image_dir}' has {len(images)} usable images, need at least {MIN_IMAGES}")

    train_idx, test_idx = split_indices(len(images), cfg.split, cfg.seed)
    logger.info("[Dataset] %s: %d train / %d test at %dx%d, %d classes",
                cfg.image_dir, len(train_idx), len(test_idx), *cfg.target_size, len(images.class_names))
    return images.subset(train_idx), images.subset(test_idx)
