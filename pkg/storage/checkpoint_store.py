"""Save and load checkpoints, feature maps and feature distributions."""
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from engine.tensor import Tensor
from schemas.errors import CheckpointLoadError, InvertKitError
from schemas.feature_schemas import FeatureDistribution, FeatureMap
from schemas.network_schemas import EncoderSpec, NetworkSpec
from .frame_codec import Frame, decode_frame, encode_frame
from .models import AdamState, Checkpoint

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_FORMAT = "checkpoint"
FEATURE_MAP_FORMAT = "feature_map"
DISTRIBUTION_FORMAT = "feature_distribution"

PARAM_PREFIX = "param."
ADAM_M_PREFIX = "adam.m."
ADAM_V_PREFIX = "adam.v."
LOSS_HISTORY = "history.loss"


@contextmanager
def atomic_write(path: PathLike):
    """Yield a temp path; it replaces ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    except Exception:
        if tmp.exists():
            tmp.unlink()
        raise


def _write(path: PathLike, frame: Frame) -> None:
    with atomic_write(path) as tmp:
        tmp.write_bytes(encode_frame(frame))


def _read(path: PathLike, expected_format: str) -> Frame:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointLoadError(f"{path}: cannot read: {e}")
    frame = decode_frame(payload, source=str(path))
    found = frame.header.get("format")
    if found != expected_format:
        raise CheckpointLoadError(f"{path}: holds '{found}', expected '{expected_format}'")
    return frame


# ==================== Checkpoints ====================

def checkpoint_to_frame(checkpoint: Checkpoint) -> Frame:
    header = {
        "format": CHECKPOINT_FORMAT,
        "network": checkpoint.network.model_dump(mode="json"),
        "encoder": None if checkpoint.encoder is None else checkpoint.encoder.model_dump(mode="json"),
        "metadata": checkpoint.metadata,
    }
    tensors = {}
    for name, value in checkpoint.parameters.items():
        tensors[PARAM_PREFIX + name] = value
    for name, value in checkpoint.adam.m.items():
        tensors[ADAM_M_PREFIX + name] = value
    for name, value in checkpoint.adam.v.items():
        tensors[ADAM_V_PREFIX + name] = value
    tensors[LOSS_HISTORY] = np.asarray(checkpoint.loss_history, dtype=np.float64)
    return Frame(header=header, tensors=tensors, step=checkpoint.adam.step, rng_state=checkpoint.rng_state)


def checkpoint_from_frame(frame: Frame, source: str = "<frame>") -> Checkpoint:
    try:
        network = NetworkSpec.model_validate(frame.header["network"])
        encoder_json = frame.header.get("encoder")
        encoder = None if encoder_json is None else EncoderSpec.model_validate(encoder_json)
    except (KeyError, ValidationError, InvertKitError) as e:
        raise CheckpointLoadError(f"{source}: invalid network description: {e}")

    params, adam = {}, AdamState(step=frame.step)
    history = np.zeros(0, dtype=np.float64)
    for name, value in frame.tensors.items():
        if name.startswith(PARAM_PREFIX):
            params[name[len(PARAM_PREFIX):]] = value
        elif name.startswith(ADAM_M_PREFIX):
            adam.m[name[len(ADAM_M_PREFIX):]] = value
        elif name.startswith(ADAM_V_PREFIX):
            adam.v[name[len(ADAM_V_PREFIX):]] = value
        elif name == LOSS_HISTORY:
            history = value
        else:
            raise CheckpointLoadError(f"{source}: unexpected tensor '{name}'")

    expected = set(network.parameter_shapes())
    decoder_names = {k for k in params if not k.startswith("encoder.")}
    if decoder_names != expected:
        raise CheckpointLoadError(
            f"{source}: parameters {sorted(decoder_names ^ expected)} do not match the network"
        )
    return Checkpoint(
        network=network,
        parameters=params,
        adam=adam,
        rng_state=frame.rng_state,
        loss_history=history,
        encoder=encoder,
        metadata=frame.header.get("metadata") or {},
    )


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    _write(path, checkpoint_to_frame(checkpoint))
    logger.info("[Checkpoint] saved %s at step %d", path, checkpoint.adam.step)


def load_checkpoint(path: PathLike) -> Checkpoint:
    checkpoint = checkpoint_from_frame(_read(path, CHECKPOINT_FORMAT), source=str(path))
    logger.info("[Checkpoint] loaded %s (%s, step %d)", path, checkpoint.network.name, checkpoint.step)
    return checkpoint


# ==================== Feature maps ====================

def save_feature_map(path: PathLike, feature_map: FeatureMap) -> None:
    frame = Frame(
        header={"format": FEATURE_MAP_FORMAT, "metadata": feature_map.metadata()},
        tensors={"features": feature_map.tensor.data},
    )
    _write(path, frame)


def load_feature_map(path: PathLike) -> FeatureMap:
    frame = _read(path, FEATURE_MAP_FORMAT)
    meta = frame.header.get("metadata") or {}
    if "features" not in frame.tensors:
        raise CheckpointLoadError(f"{path}: no 'features' tensor")
    try:
        return FeatureMap(
            tensor=Tensor(frame.tensors["features"]),
            extractor=meta["extractor"],
            cell=meta["cell"],
            source_size=tuple(meta["source_size"]),
            tap=meta.get("tap"),
        )
    except (KeyError, ValidationError, InvertKitError) as e:
        raise CheckpointLoadError(f"{path}: invalid feature map metadata: {e}")


# ==================== Feature distributions ====================

def save_distribution(path: PathLike, dist: FeatureDistribution) -> None:
    header = {
        "format": DISTRIBUTION_FORMAT,
        "mode": dist.mode,
        "feature_shape": list(dist.feature_shape),
        "sample_count": dist.sample_count,
        "mean": dist.mean,
        "std": dist.std,
        "lower": dist.lower,
    }
    tensors = {"zero_counts": dist.zero_counts.astype(np.int64)}
    if dist.mode == "histogram":
        tensors["bin_edges"] = dist.bin_edges.astype(np.float64)
        tensors["counts"] = dist.counts.astype(np.int64)
    _write(path, Frame(header=header, tensors=tensors))
    logger.info("[Distribution] saved %s (%s, %d dims)", path, dist.mode, dist.dimensions)


def load_distribution(path: PathLike) -> FeatureDistribution:
    frame = _read(path, DISTRIBUTION_FORMAT)
    header = frame.header
    try:
        return FeatureDistribution(
            mode=header["mode"],
            feature_shape=tuple(header["feature_shape"]),
            sample_count=header["sample_count"],
            zero_counts=frame.tensors["zero_counts"],
            bin_edges=frame.tensors.get("bin_edges"),
            counts=frame.tensors.get("counts"),
            mean=header.get("mean"),
            std=header.get("std"),
            lower=header.get("lower", 0.0),
        )
    except (KeyError, ValidationError, InvertKitError) as e:
        raise CheckpointLoadError(f"{path}: invalid feature distribution: {e}")
