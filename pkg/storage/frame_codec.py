"""
Little-endian binary framing shared by checkpoints, feature maps and
feature-distribution sidecars.

    magic "IVKT" | u32 version | u32 len + JSON header
    u32 tensor count | per tensor: u16 len + name, u8 dtype, u8 rank, u32 dims..., raw data
    u64 step | u32 len + RNG state JSON
"""
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from schemas.errors import CheckpointLoadError, UsageError

MAGIC = b"IVKT"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_TAG_DTYPES = {tag: dtype for dtype, tag in _DTYPE_TAGS.items()}


@dataclass
class Frame:
    header: dict
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_state: Optional[dict] = None


def _canonical_json(value) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_frame(frame: Frame) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    header = _canonical_json(frame.header)
    parts.append(struct.pack("<I", len(header)))
    parts.append(header)

    parts.append(struct.pack("<I", len(frame.tensors)))
    for name, array in frame.tensors.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in _DTYPE_TAGS:
            raise UsageError(f"tensor '{name}' has unsupported dtype {array.dtype}")
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())

    parts.append(struct.pack("<Q", frame.step))
    rng = _canonical_json(frame.rng_state or {})
    parts.append(struct.pack("<I", len(rng)))
    parts.append(rng)
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise CheckpointLoadError(f"{self.source}: truncated while reading {what}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def json(self, what: str):
        (length,) = self.unpack("<I", f"{what} length")
        try:
            return json.loads(self.take(length, what).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointLoadError(f"{self.source}: corrupt {what}: {e}")


def decode_frame(payload: bytes, source: str = "<bytes>") -> Frame:
    reader = _Reader(payload, source)
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointLoadError(f"{source}: bad magic, not an IVKT file")
    (version,) = reader.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointLoadError(f"{source}: unsupported version {version}, expected {FORMAT_VERSION}")
    header = reader.json("header")

    (count,) = reader.unpack("<I", "tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H", "tensor name length")
        name = reader.take(name_length, "tensor name").decode("utf-8", errors="replace")
        tag, rank = reader.unpack("<BB", f"'{name}' dtype")
        if tag not in _TAG_DTYPES:
            raise CheckpointLoadError(f"{source}: tensor '{name}' has unknown dtype tag {tag}")
        dims = reader.unpack(f"<{rank}I", f"'{name}' dims")
        dtype = _TAG_DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = reader.take(size, f"'{name}' data")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))

    (step,) = reader.unpack("<Q", "step")
    rng_state = reader.json("rng state")
    if reader.offset != len(payload):
        raise CheckpointLoadError(f"{source}: {len(payload) - reader.offset} trailing bytes")
    return Frame(header=header, tensors=tensors, step=step, rng_state=rng_state or None)
