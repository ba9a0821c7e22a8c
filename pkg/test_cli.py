"""End-to-end runs of every subcommand through main()."""
import csv
import json
import shutil

import numpy as np
import pytest
from PIL import Image

import main as cli
from schemas.errors import NumericalError
from storage.checkpoint_store import load_checkpoint, load_distribution, load_feature_map
from utilities.imaging import load_image

TINY = ["--width", "0.0625", "--batch", "2", "--montage-every", "100"]


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture(scope="module")
def pair_dir(corpus_dir, tmp_path_factory):
    """Two images from different classes in one flat folder."""
    root = tmp_path_factory.mktemp("pair")
    shutil.copy(next((corpus_dir / "stripes").glob("*.png")), root / "a.png")
    shutil.copy(next((corpus_dir / "rings").glob("*.png")), root / "b.png")
    return root


@pytest.fixture(scope="module")
def hog_checkpoint(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("hog_run")
    code = cli.main(["train", "--data", str(corpus_dir), "--features", "hog", "--steps", "3",
                     "--seed", "0", "--out", str(out), *TINY])
    assert code == 0
    return out / "checkpoint.ivkt"


# ==================== extract ====================

def test_extract_hog(corpus_dir, tmp_path):
    out = tmp_path / "feats"
    assert cli.main(["extract", "--input", str(corpus_dir), "--features", "hog", "--out", str(out)]) == 0
    maps = sorted(out.glob("*.fmap"))
    assert len(maps) == 12
    fmap = load_feature_map(out / "stripes__stripes_0000.fmap")
    assert fmap.shape == (31, 8, 8)
    assert fmap.source_size == (64, 64)
    assert (out / "run_config.json").exists()


def test_extract_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = cli.main(["extract", "--input", str(tmp_path / "empty"), "--features", "hog",
                     "--out", str(tmp_path / "out")])
    assert code == 2
    assert "no images" in capsys.readouterr().err


def test_extract_sift_is_deterministic(pair_dir, tmp_path):
    for name in ("first", "second"):
        assert cli.main(["extract", "--input", str(pair_dir), "--features", "sift_grid",
                         "--seed", "5", "--out", str(tmp_path / name)]) == 0
    produced = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*")
                      if p.is_file() and p.name != "run_config.json")
    assert any(p.suffix == ".fmap" for p in produced)
    for relative in produced:
        assert (tmp_path / "first" / relative).read_bytes() == (tmp_path / "second" / relative).read_bytes()
    fmap = load_feature_map(tmp_path / "first" / "a.fmap")
    assert fmap.shape == (133, 16, 16)


def test_extract_with_missing_keypoint_files(pair_dir, tmp_path, capsys):
    (tmp_path / "keys").mkdir()
    code = cli.main(["extract", "--input", str(pair_dir), "--features", "sift_grid",
                     "--keypoint-dir", str(tmp_path / "keys"), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "cannot read keypoint file" in capsys.readouterr().err


# ==================== train ====================

def test_train_requires_data(tmp_path, capsys):
    assert cli.main(["train", "--features", "hog", "--out", str(tmp_path)]) == 2
    assert "dataset" in capsys.readouterr().err


def test_train_outputs(hog_checkpoint):
    out = hog_checkpoint.parent
    checkpoint = load_checkpoint(hog_checkpoint)
    assert checkpoint.step == 3
    assert len(checkpoint.loss_history) == 3
    assert checkpoint.metadata["feature_source"]["extractor"] == "hog"
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["step", "loss", "lr", "normalized_error"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert (out / "montage_000003.png").exists()
    config = json.loads((out / "run_config.json").read_text())
    assert config["train"]["steps"] == 3


def test_train_is_reproducible(corpus_dir, tmp_path):
    args = ["train", "--data", str(corpus_dir), "--features", "hog", "--steps", "3", "--seed", "4",
            "--out", str(tmp_path), *TINY]
    assert cli.main(args) == 0
    first = (tmp_path / "checkpoint.ivkt").read_bytes()
    assert cli.main(args) == 0
    assert (tmp_path / "checkpoint.ivkt").read_bytes() == first


def test_train_resume_continues(corpus_dir, hog_checkpoint, tmp_path):
    assert cli.main(["train", "--data", str(corpus_dir), "--features", "hog", "--steps", "5",
                     "--seed", "0", "--resume", str(hog_checkpoint), "--out", str(tmp_path), *TINY]) == 0
    resumed = load_checkpoint(tmp_path / "checkpoint.ivkt")
    assert resumed.step == 5
    np.testing.assert_array_equal(resumed.loss_history[:3], load_checkpoint(hog_checkpoint).loss_history)


def test_numerical_failure_exits_3(monkeypatch, tmp_path, capsys):
    def explode(args):
        raise NumericalError("upconvJ6", "gradient is NaN")

    monkeypatch.setattr(cli, "cmd_train", explode)
    assert cli.main(["train", "--out", str(tmp_path)]) == 3
    assert "upconvJ6" in capsys.readouterr().err


# ==================== invert ====================

def test_invert_images(hog_checkpoint, pair_dir, tmp_path):
    assert cli.main(["invert", "--checkpoint", str(hog_checkpoint), "--input", str(pair_dir),
                     "--out", str(tmp_path)]) == 0
    assert load_image(tmp_path / "a.png").shape == (3, 64, 64)
    with Image.open(tmp_path / "montage.png") as montage:
        assert montage.size == (132, 132)


def test_invert_feature_files(hog_checkpoint, pair_dir, tmp_path):
    feats = tmp_path / "feats"
    assert cli.main(["extract", "--input", str(pair_dir), "--features", "hog", "--out", str(feats)]) == 0
    assert cli.main(["invert", "--checkpoint", str(hog_checkpoint), "--feature-dir", str(feats),
                     "--out", str(tmp_path / "from_files")]) == 0
    assert cli.main(["invert", "--checkpoint", str(hog_checkpoint), "--input", str(pair_dir),
                     "--out", str(tmp_path / "from_images")]) == 0
    np.testing.assert_array_equal(load_image(tmp_path / "from_files" / "a.png"),
                                  load_image(tmp_path / "from_images" / "a.png"))


def test_invert_rejects_foreign_features(hog_checkpoint, pair_dir, tmp_path, capsys):
    feats = tmp_path / "lbp"
    assert cli.main(["extract", "--input", str(pair_dir), "--features", "lbp", "--out", str(feats)]) == 0
    code = cli.main(["invert", "--checkpoint", str(hog_checkpoint), "--feature-dir", str(feats),
                     "--out", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert "(58, 4, 4)" in err
    assert "(31, 8, 8)" in err


# ==================== evaluate ====================

def test_evaluate_identity_baseline(corpus_dir, tmp_path, capsys):
    assert cli.main(["evaluate", "--baseline", "identity", "--data", str(corpus_dir),
                     "--out", str(tmp_path)]) == 0
    assert "Normalized error: 0.000000" in capsys.readouterr().out
    rows = read_csv(tmp_path / "evaluation.csv")
    assert rows[0] == ["image", "error"]
    assert all(float(r[1]) == 0.0 for r in rows[1:])


def test_evaluate_mean_baseline_and_checkpoint(corpus_dir, hog_checkpoint, tmp_path):
    assert cli.main(["evaluate", "--baseline", "mean", "--data", str(corpus_dir), "--all-images",
                     "--out", str(tmp_path / "mean")]) == 0
    rows = read_csv(tmp_path / "mean" / "evaluation.csv")
    assert len(rows) == 13
    assert np.mean([float(r[1]) for r in rows[1:]]) <= 1.0

    assert cli.main(["evaluate", "--checkpoint", str(hog_checkpoint), "--data", str(corpus_dir),
                     "--out", str(tmp_path / "model")]) == 0
    assert len(read_csv(tmp_path / "model" / "evaluation.csv")) == 3


def test_evaluate_needs_a_model(corpus_dir, tmp_path):
    assert cli.main(["evaluate", "--data", str(corpus_dir), "--out", str(tmp_path)]) == 2


# ==================== analysis commands ====================

def test_perturb_binarize_keeps_norm(hog_checkpoint, pair_dir, tmp_path):
    assert cli.main(["perturb", "--checkpoint", str(hog_checkpoint), "--input", str(pair_dir),
                     "--kind", "binarize", "--kind", "keep_top_k", "--k", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "perturbations.csv")
    assert rows[0] == ["image", "kind", "norm_ratio", "error"]
    binarized = [r for r in rows[1:] if r[1] == "binarize"]
    assert len(binarized) == 2
    assert all(float(r[2]) == pytest.approx(1.0, abs=1e-6) for r in binarized)
    summary = read_csv(tmp_path / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["none", "binarize", "keep_top_k"]
    assert (tmp_path / "perturbations.png").exists()


def test_interpolation_endpoints_match_inversion(hog_checkpoint, pair_dir, tmp_path):
    assert cli.main(["invert", "--checkpoint", str(hog_checkpoint), "--input", str(pair_dir),
                     "--out", str(tmp_path / "inv")]) == 0
    assert cli.main(["interpolate", "--checkpoint", str(hog_checkpoint), "--first", str(pair_dir / "a.png"),
                     "--second", str(pair_dir / "b.png"), "--steps", "6", "--out", str(tmp_path / "mix")]) == 0
    frames = sorted((tmp_path / "mix").glob("frame_*.png"))
    assert len(frames) == 6
    np.testing.assert_array_equal(load_image(frames[0]), load_image(tmp_path / "inv" / "a.png"))
    np.testing.assert_array_equal(load_image(frames[-1]), load_image(tmp_path / "inv" / "b.png"))
    rows = read_csv(tmp_path / "mix" / "interpolation.csv")
    assert float(rows[1][1]) == 0.0 and float(rows[-1][1]) == 1.0


def test_fit_and_sample(hog_checkpoint, corpus_dir, tmp_path):
    assert cli.main(["fit-distribution", "--checkpoint", str(hog_checkpoint), "--input", str(corpus_dir),
                     "--bins", "16", "--out", str(tmp_path / "dist")]) == 0
    dist = load_distribution(tmp_path / "dist" / "distribution.ivkt")
    assert dist.sample_count == 12
    assert dist.feature_shape == (31, 8, 8)

    assert cli.main(["sample", "--checkpoint", str(hog_checkpoint), "--distribution",
                     str(tmp_path / "dist" / "distribution.ivkt"), "--out", str(tmp_path / "samples")]) == 0
    assert len(list((tmp_path / "samples").glob("sample_*.png"))) == 7
    rows = read_csv(tmp_path / "samples" / "samples.csv")
    assert rows[0] == ["sample", "alpha", "nonzero_fraction"]
    assert len(rows) == 8


def test_neurons(hog_checkpoint, tmp_path):
    assert cli.main(["neurons", "--checkpoint", str(hog_checkpoint), "--units", "0", "5",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "unit_00000.png").exists()
    assert (tmp_path / "unit_00005.png").exists()
    with Image.open(tmp_path / "units.png") as units:
        assert units.size == (132, 64)


# ==================== encoder features ====================

def test_encoder_pipeline(corpus_dir, pair_dir, tmp_path):
    enc = tmp_path / "enc"
    assert cli.main(["train-encoder", "--data", str(corpus_dir), "--steps", "2", "--batch", "4",
                     "--width", "0.25", "--out", str(enc)]) == 0
    encoder = load_checkpoint(enc / "encoder.ivkt")
    assert encoder.encoder.classes == 4
    assert encoder.metadata["class_names"] == ["blobs", "checker", "rings", "stripes"]

    for mode in ("fixed_encoder", "autoencoder"):
        out = tmp_path / mode
        assert cli.main(["train", "--data", str(corpus_dir), "--features", "encoder_layer",
                         "--encoder-checkpoint", str(enc / "encoder.ivkt"), "--tap", "conv5",
                         "--mode", mode, "--steps", "2", "--batch", "2", "--width", "0.25",
                         "--montage-every", "100", "--out", str(out)]) == 0
        checkpoint = load_checkpoint(out / "checkpoint.ivkt")
        assert checkpoint.encoder is not None
        assert checkpoint.metadata["feature_source"]["tap"] == "conv5"

    assert cli.main(["invert", "--checkpoint", str(tmp_path / "autoencoder" / "checkpoint.ivkt"),
                     "--input", str(pair_dir), "--out", str(tmp_path / "inv")]) == 0
    assert (tmp_path / "inv" / "b.png").exists()
