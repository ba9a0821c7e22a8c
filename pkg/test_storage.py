"""Binary frames, checkpoints, feature-map files and keypoint text files."""
import numpy as np
import pytest

from engine.tensor import Tensor
from schemas.errors import CheckpointLoadError, InputValidationError, KeypointParseError
from schemas.feature_schemas import FeatureMap, KeypointSet
from services.analysis_service import fit_distribution
from services.network_builder import build_hog_net, build_network
from storage.checkpoint_store import (
    load_checkpoint,
    load_distribution,
    load_feature_map,
    save_checkpoint,
    save_distribution,
    save_feature_map,
)
from storage.frame_codec import MAGIC, Frame, decode_frame, encode_frame
from storage.keypoint_files import load_keypoints, parse_keypoints, save_keypoints
from storage.models import AdamState, Checkpoint


def make_checkpoint() -> Checkpoint:
    rng = np.random.default_rng(5)
    spec = build_hog_net(8, width=0.125)
    params = build_network(spec, rng).state_dict()
    adam = AdamState.zeros_like(params)
    adam.m = {k: rng.standard_normal(v.shape).astype(v.dtype) for k, v in params.items()}
    adam.step = 7
    return Checkpoint(
        network=spec,
        parameters=params,
        adam=adam,
        rng_state=np.random.default_rng(11).bit_generator.state,
        loss_history=np.array([3.0, 2.5, 2.25]),
        metadata={"run_config": {"seed": 0}},
    )


def random_keypoints(count: int, rng) -> KeypointSet:
    return KeypointSet.from_records([
        (rng.uniform(0, 64), rng.uniform(0, 48), rng.uniform(1, 8), rng.uniform(-np.pi, np.pi),
         rng.uniform(0, 0.2, 128))
        for _ in range(count)
    ])


# ==================== Checkpoints ====================

def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    first, second = tmp_path / "a.ivkt", tmp_path / "b.ivkt"
    save_checkpoint(first, make_checkpoint())
    loaded = load_checkpoint(first)
    save_checkpoint(second, loaded)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:4] == MAGIC


def test_checkpoint_contents_survive(tmp_path):
    original = make_checkpoint()
    save_checkpoint(tmp_path / "c.ivkt", original)
    loaded = load_checkpoint(tmp_path / "c.ivkt")
    assert loaded.step == 7
    assert loaded.network == original.network
    assert loaded.rng_state == original.rng_state
    np.testing.assert_array_equal(loaded.loss_history, original.loss_history)
    for name, value in original.parameters.items():
        assert loaded.parameters[name].dtype == value.dtype
        np.testing.assert_array_equal(loaded.parameters[name], value)
        np.testing.assert_array_equal(loaded.adam.m[name], original.adam.m[name])


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "c.ivkt"
    save_checkpoint(path, make_checkpoint())
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointLoadError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.ivkt"
    save_checkpoint(path, make_checkpoint())
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(CheckpointLoadError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version():
    payload = bytearray(encode_frame(Frame(header={"format": "checkpoint"})))
    payload[4] = 9
    with pytest.raises(CheckpointLoadError, match="version"):
        decode_frame(bytes(payload))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointLoadError):
        load_checkpoint(tmp_path / "absent.ivkt")


def test_wrong_format_is_rejected(tmp_path):
    path = tmp_path / "map.fmap"
    save_feature_map(path, FeatureMap(
        tensor=Tensor(np.zeros((1, 31, 2, 2))), extractor="hog", cell=8, source_size=(16, 16),
    ))
    with pytest.raises(CheckpointLoadError, match="expected 'checkpoint'"):
        load_checkpoint(path)


def test_failed_write_leaves_previous_file(tmp_path, monkeypatch):
    path = tmp_path / "c.ivkt"
    save_checkpoint(path, make_checkpoint())
    before = path.read_bytes()

    def broken(frame):
        raise RuntimeError("disk full")

    monkeypatch.setattr("storage.checkpoint_store.encode_frame", broken)
    with pytest.raises(RuntimeError):
        save_checkpoint(path, make_checkpoint())
    assert path.read_bytes() == before
    assert not (tmp_path / "c.ivkt.tmp").exists()


# ==================== Feature maps and distributions ====================

def test_feature_map_round_trip(tmp_path, rng):
    values = rng.random((1, 58, 3, 4)).astype(np.float32)
    path = tmp_path / "img.fmap"
    save_feature_map(path, FeatureMap(tensor=Tensor(values), extractor="lbp", cell=16, source_size=(64, 48)))
    loaded = load_feature_map(path)
    assert loaded.extractor == "lbp"
    assert loaded.cell == 16
    assert loaded.source_size == (64, 48)
    np.testing.assert_array_equal(loaded.tensor.data, values)


def test_distribution_round_trip(tmp_path, rng):
    features = [np.maximum(rng.standard_normal((1, 4, 2, 2)), 0) for _ in range(20)]
    for mode in ("histogram", "trunc_gaussian"):
        dist = fit_distribution(features, mode=mode, bins=8)
        path = tmp_path / f"{mode}.ivkt"
        save_distribution(path, dist)
        loaded = load_distribution(path)
        assert loaded.mode == mode
        assert loaded.feature_shape == (4, 2, 2)
        np.testing.assert_array_equal(loaded.zero_counts, dist.zero_counts)
        if mode == "histogram":
            np.testing.assert_array_equal(loaded.counts, dist.counts)
            np.testing.assert_array_equal(loaded.bin_edges, dist.bin_edges)
        else:
            assert loaded.mean == dist.mean
            assert loaded.std == dist.std


# ==================== Keypoint files ====================

def test_keypoint_round_trip(tmp_path, rng):
    keypoints = random_keypoints(6, rng)
    path = tmp_path / "img.keys"
    save_keypoints(keypoints, path)
    loaded = load_keypoints(path)
    assert len(loaded) == 6
    np.testing.assert_allclose(loaded.positions, keypoints.positions, atol=1e-6)
    np.testing.assert_allclose(loaded.scales, keypoints.scales, atol=1e-6)
    np.testing.assert_allclose(loaded.orientations, keypoints.orientations, atol=1e-6)
    np.testing.assert_allclose(loaded.descriptors, keypoints.descriptors, atol=1e-6)


def test_empty_keypoint_file(tmp_path):
    path = tmp_path / "none.keys"
    path.write_text("", encoding="utf-8")
    assert len(load_keypoints(path)) == 0


def test_comments_and_blank_lines_are_skipped():
    line = " ".join(["1", "2", "3", "0"] + ["0.1"] * 128)
    keypoints = parse_keypoints(f"# header\n\n{line}\n")
    assert len(keypoints) == 1
    assert keypoints.positions[0].tolist() == [1.0, 2.0]


def test_short_line_reports_its_number():
    line = " ".join(["1", "2", "3", "0"] + ["0.1"] * 128)
    with pytest.raises(KeypointParseError) as info:
        parse_keypoints(f"{line}\n1 2 3\n")
    assert info.value.line_number == 2


def test_non_positive_scale():
    line = " ".join(["1", "2", "0", "0"] + ["0.1"] * 128)
    with pytest.raises(KeypointParseError):
        parse_keypoints(line)


def test_missing_keypoint_file(tmp_path):
    with pytest.raises(InputValidationError) as info:
        load_keypoints(tmp_path / "absent.key")
    assert "absent.key" in info.value.detail


def test_keypoint_file_must_be_utf8(tmp_path):
    path = tmp_path / "latin.key"
    path.write_bytes(b"# \xff\xfe not utf-8\n")
    with pytest.raises(InputValidationError) as info:
        load_keypoints(path)
    assert "UTF-8" in info.value.detail
