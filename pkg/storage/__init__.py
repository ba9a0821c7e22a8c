"""Storage package initialization."""
from .models import AdamState, Checkpoint
from .frame_codec import MAGIC, FORMAT_VERSION, Frame, decode_frame, encode_frame
from .checkpoint_store import (
    atomic_write,
    save_checkpoint,
    load_checkpoint,
    save_feature_map,
    load_feature_map,
    save_distribution,
    load_distribution
)
from .keypoint_files import load_keypoints, save_keypoints, parse_keypoints

__all__ = [
    "AdamState",
    "Checkpoint",
    "MAGIC",
    "FORMAT_VERSION",
    "Frame",
    "decode_frame",
    "encode_frame",
    "atomic_write",
    "save_checkpoint",
    "load_checkpoint",
    "save_feature_map",
    "load_feature_map",
    "save_distribution",
    "load_distribution",
    "load_keypoints",
    "save_keypoints",
    "parse_keypoints"
]
