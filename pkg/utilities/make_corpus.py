"""
Synthetic Corpus Utility

Writes a small class-structured image corpus for smoke runs: one
sub-directory per class, each image a randomly parameterized pattern of that
class (stripes, rings, checkerboards, blobs). Images alternate between PNG
and PPM so both decoders get exercised.

Usage:
    python utilities/make_corpus.py --out data/desk --per-class 64 --size 64 --seed 0

Environment variables (optional):
    - INVERTKIT_THREADS
"""
import sys
import argparse
from pathlib import Path

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent))

# Load environment variables BEFORE importing settings
from dotenv import load_dotenv
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(env_path)

import numpy as np

from utilities.imaging import save_image

CLASSES = ("stripes", "rings", "checker", "blobs")


def _colors(rng: np.random.Generator):
    return rng.uniform(0.0, 1.0, size=(2, 3, 1, 1))


def _blend(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    a, b = _colors(rng)
    return (mask[None] * a + (1.0 - mask[None]) * b).astype(np.float32)


def stripes(size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(6, 16)
    phase = xs * np.cos(angle) + ys * np.sin(angle)
    return _blend(0.5 + 0.5 * np.sin(2 * np.pi * phase / period), rng)


def rings(size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    period = rng.uniform(6, 14)
    radius = np.hypot(ys - cy, xs - cx)
    return _blend(0.5 + 0.5 * np.cos(2 * np.pi * radius / period), rng)


def checker(size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    cell = int(rng.integers(4, 13))
    return _blend(((ys // cell + xs // cell) % 2).astype(np.float64), rng)


def blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size))
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(3, size / 6)
        mask += np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
    return _blend(np.clip(mask, 0.0, 1.0), rng)


GENERATORS = {"stripes": stripes, "rings": rings, "checker": checker, "blobs": blobs}


def write_corpus(out: Path, per_class: int, size: int, seed: int, classes=CLASSES) -> int:
    """Write ``per_class`` images for each class; returns the number written."""
    rng = np.random.default_rng(seed)
    written = 0
    for name in classes:
        for index in range(per_class):
            image = GENERATORS[name](size, rng)
            suffix = ".ppm" if index % 2 else ".png"
            save_image(Path(out) / name / f"{name}_{index:04d}{suffix}", image)
            written += 1
    return written


def main():
    parser = argparse.ArgumentParser(description="Write a synthetic class-structured image corpus")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--per-class", type=int, default=16, help="Images per class")
    parser.add_argument("--size", type=int, default=64, help="Image side in pixels")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--classes", nargs="+", choices=CLASSES, default=list(CLASSES))
    args = parser.parse_args()

    if args.per_class < 1:
        print("Error: --per-class must be positive")
        sys.exit(1)
    if args.size < 32:
        print("Error: --size must be at least 32 pixels")
        sys.exit(1)

    print("=" * 60)
    print("Writing synthetic corpus")
    print("=" * 60)
    count = write_corpus(Path(args.out), args.per_class, args.size, args.seed, args.classes)
    print(f"Classes: {', '.join(args.classes)}")
    print(f"Images written: {count}")
    print(f"Location: {args.out}")


if __name__ == "__main__":
    main()
