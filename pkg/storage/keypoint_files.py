"""
Keypoint text files.

UTF-8, one keypoint per line: ``x y scale orientation d0 ... d127`` (132
whitespace-separated numbers). Blank lines and lines starting with ``#`` are
ignored.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np

from schemas.errors import InputValidationError, KeypointParseError
from schemas.feature_schemas import SIFT_DESCRIPTOR_SIZE, KeypointSet
from .checkpoint_store import atomic_write

logger = logging.getLogger(__name__)

FIELDS_PER_LINE = 4 + SIFT_DESCRIPTOR_SIZE


def parse_keypoints(text: str) -> KeypointSet:
    records = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != FIELDS_PER_LINE:
            raise KeypointParseError(line_number, f"expected {FIELDS_PER_LINE} fields, found {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError as e:
            raise KeypointParseError(line_number, str(e))
        if not np.all(np.isfinite(values)):
            raise KeypointParseError(line_number, "non-finite value")
        if values[2] <= 0:
            raise KeypointParseError(line_number, f"scale must be positive, got {values[2]}")
        records.append((values[0], values[1], values[2], values[3], np.array(values[4:])))
    return KeypointSet.from_records(records)


def load_keypoints(path: Union[str, Path]) -> KeypointSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise InputValidationError(f"{path}: keypoint file is not UTF-8 text: {e}")
    except OSError as e:
        raise InputValidationError(f"{path}: cannot read keypoint file: {e.strerror or e}")
    keypoints = parse_keypoints(text)
    logger.debug("[Keypoints] %s: %d keypoints", path, len(keypoints))
    return keypoints


def format_keypoints(keypoints: KeypointSet) -> str:
    lines = ["# x y scale orientation descriptor[128]"]
    for x, y, scale, orientation, descriptor in keypoints.records():
        numbers = [x, y, scale, orientation, *descriptor.tolist()]
        lines.append(" ".join(repr(float(v)) for v in numbers))
    return "\n".join(lines) + "\n"


def save_keypoints(keypoints: KeypointSet, path: Union[str, Path]) -> None:
    with atomic_write(path) as tmp:
        tmp.write_text(format_keypoints(keypoints), encoding="utf-8")
