"""
invertkit - command line entry point

Extracts shallow and encoder features, trains up-convolutional decoders that
invert them, reconstructs and scores images, and runs the feature-space
analyses (perturbation, interpolation, random sampling, single units).

Usage:
    python main.py extract --input images/ --out feats/ --features hog --cell 8
    python main.py train --data images/ --features hog --steps 2000 --seed 7 --out runs/hog
    python main.py invert --checkpoint runs/hog/checkpoint.ivkt --input images/ --out recon/
    python main.py evaluate --checkpoint runs/hog/checkpoint.ivkt --data images/ --out eval/

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""
import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from engine.tensor import Tensor
from schemas import (
    DatasetConfig,
    DatasetError,
    DivergenceError,
    InputValidationError,
    InvertKitError,
    PerturbationKind,
    PerturbationSpec,
    RunConfig,
    UsageError,
    get_settings,
)
from schemas.feature_schemas import FeatureMap
from services.analysis_service import (
    activate_single_unit,
    fit_distribution,
    interpolate,
    norm_ratio,
    perturb,
    sample_features,
)
from services.dataset_service import ImageSet, list_images, load_dataset, load_images
from services.evaluation import baseline_reconstructions, evaluate, pairwise_normalizer, per_image_errors
from services.inversion_pipeline import (
    EncoderFeatureSource,
    InversionModel,
    build_feature_source,
    build_inversion_model,
    keypoint_path,
    model_from_checkpoint,
)
from services.network_builder import build_network, build_toy_encoder
from services.trainer import EncoderTrainer, InversionTrainer
from storage import (
    atomic_write,
    load_checkpoint,
    load_distribution,
    load_feature_map,
    save_checkpoint,
    save_distribution,
    save_feature_map,
    save_keypoints,
)
from utilities.imaging import grid, montage, save_image

logger = logging.getLogger("invertkit")

CHECKPOINT_NAME = "checkpoint.ivkt"
BEST_CHECKPOINT_NAME = "checkpoint_best.ivkt"
ENCODER_NAME = "encoder.ivkt"
FEATURE_SUFFIX = ".fmap"
RUN_CONFIG_NAME = "run_config.json"
# every command decodes one feature vector per forward pass
DECODE_BATCH = 1


# ==================== Configuration ====================

def _set(tree: dict, path: str, value) -> None:
    if value is None:
        return
    node = tree
    *parents, leaf = path.split(".")
    for key in parents:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[leaf] = value


OVERRIDES = {
    "out": "output_dir",
    "seed": "seed",
    "montage_every": "montage_every",
    "data": "dataset.image_dir",
    "size": "dataset.target_size",
    "split": "dataset.split",
    "max_images": "dataset.max_images",
    "features": "features.extractor",
    "cell": "features.cell",
    "tap": "features.tap",
    "encoder_checkpoint": "features.encoder_checkpoint",
    "keypoint_dir": "features.keypoint_dir",
    "net": "network.architecture",
    "width": "network.width",
    "lr": "train.lr",
    "batch": "train.batch",
    "steps": "train.steps",
    "epochs": "train.epochs",
    "mode": "train.mode",
    "workers": "train.workers",
    "log_every": "train.log_every",
    "eval_every": "train.eval_every",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    JSON file from --config, overridden by explicit flags.

    Raises:
        UsageError: Unknown keys or invalid values
    """
    tree: dict = {}
    if getattr(args, "config", None):
        try:
            tree = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config '{args.config}': {e}")
    for flag, path in OVERRIDES.items():
        value = getattr(args, flag, None)
        if isinstance(value, Path):
            value = str(value)
        _set(tree, path, value)
    if "dataset" in tree and "image_dir" not in tree["dataset"]:
        tree.pop("dataset")
    if "dataset" in tree and getattr(args, "seed", None) is not None:
        tree["dataset"]["seed"] = args.seed
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        raise UsageError(f"invalid configuration: {e}")


def write_run_config(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir) / RUN_CONFIG_NAME
    with atomic_write(path) as tmp:
        tmp.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    return path


def _require_dataset(cfg: RunConfig) -> DatasetConfig:
    if cfg.dataset is None:
        raise UsageError("missing dataset path: pass --data or set dataset.image_dir in --config")
    return cfg.dataset


def _load_folder(directory: Path, size) -> ImageSet:
    """Every decodable image under ``directory``, resized to ``size`` (W, H)."""
    paths = list_images(directory)
    images = load_images(paths, Path(directory), tuple(size))
    if len(images) == 0:
        raise DatasetError(f"no images in '{directory}'")
    return images


def _load_model(path: Path) -> InversionModel:
    return model_from_checkpoint(load_checkpoint(path))


def _stem(name: str) -> str:
    return Path(name).with_suffix("").as_posix().replace("/", "__")


def _write_csv(path: Path, header: Sequence[str], rows: List[Sequence]) -> None:
    with atomic_write(path) as tmp:
        with tmp.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)


# ==================== Commands ====================

def cmd_extract(args: argparse.Namespace) -> int:
    """Write one feature map per image (plus keypoint files for sift_grid)."""
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    size = tuple(args.size) if args.size else (64, 64)
    images = _load_folder(args.input, size)
    source = build_feature_source(cfg.features, seed=cfg.seed, normalize_lbp=False)

    written = 0
    if isinstance(source, EncoderFeatureSource):
        features = source.extract(images.images)
        for name, value in zip(images.names, features):
            fmap = FeatureMap(tensor=Tensor(value[None]), extractor="encoder_layer", cell=1,
                              source_size=images.size, tap=source.tap)
            save_feature_map(out / (_stem(name) + FEATURE_SUFFIX), fmap)
            written += 1
    else:
        describe = lambda index: source.describe_image(images.images[index], index, images.names[index])
        with ThreadPoolExecutor(max_workers=get_settings().threads) as pool:
            results = list(pool.map(describe, range(len(images))))
        for name, (fmap, keypoints) in zip(images.names, results):
            save_feature_map(out / (_stem(name) + FEATURE_SUFFIX), fmap)
            if keypoints is not None:
                save_keypoints(keypoints, keypoint_path(out, name))
            written += 1
    write_run_config(cfg)
    logger.info("[Extract] %d %s feature maps written to %s", written, source.extractor, out)
    print(f"Extracted {written} feature maps to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    dataset = _require_dataset(cfg)
    out = Path(cfg.output_dir)
    write_run_config(cfg)
    train_set, test_set = load_dataset(dataset)

    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        model = model_from_checkpoint(resume)
    else:
        rng = np.random.default_rng(cfg.seed)
        model = build_inversion_model(cfg.features, cfg.network, dataset.target_size, rng, seed=cfg.seed)
    trainer = InversionTrainer(
        model, cfg.train, seed=cfg.seed, output_dir=out, montage_every=cfg.montage_every,
        metadata={"run_config": cfg.model_dump(mode="json")},
    )
    if resume is not None:
        trainer.restore(resume)

    try:
        result = trainer.train(train_set, test_set)
    except DivergenceError as e:
        if e.checkpoint is not None:
            save_checkpoint(out / BEST_CHECKPOINT_NAME, e.checkpoint)
        raise
    save_checkpoint(out / CHECKPOINT_NAME, result.checkpoint)
    print(f"Final loss: {result.final_loss:.6f}")
    if result.test_error is not None:
        print(f"Normalized error: {result.test_error:.4f}")
    print(f"Checkpoint: {out / CHECKPOINT_NAME}")
    return 0


def cmd_train_encoder(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    dataset = _require_dataset(cfg)
    out = Path(cfg.output_dir)
    write_run_config(cfg)
    train_set, test_set = load_dataset(dataset)

    classes = args.classes or max(2, len(train_set.class_names))
    width, height = dataset.target_size
    encoder = build_toy_encoder((3, height, width), classes, cfg.network.width)
    network = build_network(encoder.network, np.random.default_rng(cfg.seed))
    trainer = EncoderTrainer(encoder, network, cfg.train, seed=cfg.seed,
                             metadata={"class_names": train_set.class_names,
                                       "run_config": cfg.model_dump(mode="json")})
    result = trainer.train(train_set, test_set)
    save_checkpoint(out / ENCODER_NAME, result.checkpoint)
    print(f"Final loss: {result.final_loss:.6f}")
    print(f"Test accuracy: {result.accuracy:.3f}")
    print(f"Encoder: {out / ENCODER_NAME}")
    return 0


def _features_from_files(model: InversionModel, directory: Path):
    paths = sorted(Path(directory).rglob("*" + FEATURE_SUFFIX))
    if not paths:
        raise DatasetError(f"no feature maps in '{directory}'")
    expected = model.source.feature_shape(model.target_size)
    names, maps = [], []
    for path in paths:
        fmap = load_feature_map(path)
        if fmap.extractor != model.source.extractor:
            raise InputValidationError(
                f"{path.name} holds {fmap.extractor} features {fmap.shape}; "
                f"the checkpoint inverts {model.source.extractor} features of shape {tuple(expected)}"
            )
        values = fmap.tensor.data[0]
        if fmap.extractor == "lbp" and getattr(model.source, "normalize_lbp", False):
            values = values / float(fmap.cell * fmap.cell)
        names.append(path.relative_to(directory).with_suffix("").as_posix())
        maps.append(values.astype(np.float32))
    return names, maps


def cmd_invert(args: argparse.Namespace) -> int:
    """Reconstruct images (or feature files) and write PNGs plus a side-by-side montage."""
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    write_run_config(cfg)

    if args.feature_dir:
        names, maps = _features_from_files(model, args.feature_dir)
        reconstructions = [model.decode(m[None], batch=DECODE_BATCH)[0] for m in maps]
        originals = None
    else:
        images = _load_folder(args.input, model.target_size)
        names = images.names
        features = model.source.extract(images.images, images.names)
        reconstructions = [model.decode(f[None], batch=DECODE_BATCH)[0] for f in features]
        originals = images.images

    reconstructions = model.upsample(np.stack(reconstructions))
    for name, image in zip(names, reconstructions):
        save_image(out / (_stem(name) + ".png"), image)
    if originals is not None:
        save_image(out / "montage.png", montage(list(zip(originals, reconstructions))))
    logger.info("[Invert] %d reconstructions written to %s", len(names), out)
    print(f"Reconstructed {len(names)} images to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    if args.baseline is None and args.checkpoint is None:
        raise UsageError("evaluate needs --checkpoint or --baseline")
    model = None if args.baseline else _load_model(args.checkpoint)
    if cfg.dataset is None:
        raise UsageError("missing dataset path: pass --data")
    if model is not None and args.size is None:
        cfg.dataset.target_size = model.target_size
    write_run_config(cfg)

    if args.all_images:
        test = _load_folder(cfg.dataset.image_dir, cfg.dataset.target_size)
    else:
        _, test = load_dataset(cfg.dataset)
    if args.baseline:
        reconstructions = baseline_reconstructions(args.baseline, test.images)
    else:
        features = model.source.extract(test.images, test.names)
        reconstructions = np.stack([model.decode(f[None], batch=DECODE_BATCH)[0] for f in features])

    mean_error, errors = evaluate(reconstructions, test.images, seed=cfg.seed)
    _write_csv(out / "evaluation.csv", ("image", "error"),
               [(name, repr(float(e))) for name, e in zip(test.names, errors)])
    print(f"Normalized error: {mean_error:.6f}")
    return 0


def _perturbation_specs(args: argparse.Namespace) -> List[PerturbationSpec]:
    kinds = args.kind or [k.value for k in PerturbationKind]
    specs = []
    for kind in kinds:
        kind = PerturbationKind(kind)
        fraction = args.fraction if kind in (PerturbationKind.DROPOUT_RANDOM,
                                             PerturbationKind.DROP_LEAST_THEN_BINARIZE) else None
        k = args.k if kind in (PerturbationKind.KEEP_TOP_K, PerturbationKind.ZERO_TOP_K) else None
        try:
            specs.append(PerturbationSpec(kind=kind, fraction=fraction, k=k, seed=args.seed or 0))
        except ValidationError as e:
            raise UsageError(f"invalid perturbation: {e}")
    return specs


def cmd_perturb(args: argparse.Namespace) -> int:
    """Decode perturbed features; one grid row per image, one CSV row per (image, kind)."""
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    images = _load_folder(args.input, model.target_size)
    specs = _perturbation_specs(args)
    write_run_config(cfg)

    features = model.source.extract(images.images, images.names)
    baseline = model.upsample(np.stack([model.decode(f[None], batch=DECODE_BATCH)[0] for f in features]))
    decoded = {}
    rows = []
    for spec in specs:
        rng = np.random.default_rng([cfg.seed, list(PerturbationKind).index(spec.kind)])
        perturbed = [perturb(f, spec, rng).astype(np.float32) for f in features]
        decoded[spec.kind] = model.upsample(
            np.stack([model.decode(p[None], batch=DECODE_BATCH)[0] for p in perturbed])
        )
        for name, original, changed in zip(images.names, features, perturbed):
            rows.append([name, spec.kind.value, repr(norm_ratio(original, changed))])

    summary = []
    if len(images) >= 2:
        normalizer = pairwise_normalizer(images.images, seed=cfg.seed)
        summary.append(["none", repr(float(per_image_errors(baseline, images.images, normalizer).mean()))])
        by_kind = {}
        for spec in specs:
            errors = per_image_errors(decoded[spec.kind], images.images, normalizer)
            by_kind[spec.kind] = errors
            summary.append([spec.kind.value, repr(float(errors.mean()))])
        for row in rows:
            index = images.names.index(row[0])
            row.append(repr(float(by_kind[PerturbationKind(row[1])][index])))
    _write_csv(out / "perturbations.csv", ("image", "kind", "norm_ratio", "error") if summary
               else ("image", "kind", "norm_ratio"), rows)
    if summary:
        _write_csv(out / "summary.csv", ("kind", "normalized_error"), summary)

    cells = [[images.images[i], baseline[i]] + [decoded[s.kind][i] for s in specs] for i in range(len(images))]
    save_image(out / "perturbations.png", grid(cells))
    print(f"Perturbed {len(images)} images with {len(specs)} perturbations; results in {out}")
    return 0


def cmd_interpolate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    write_run_config(cfg)
    pair = [_load_folder_file(path, model.target_size) for path in (args.first, args.second)]
    features = model.source.extract(np.stack([p for p, _ in pair]), [n for _, n in pair])

    frames = interpolate(features[0], features[1], args.steps)
    decoded = model.upsample(
        np.stack([model.decode(f[None].astype(np.float32), batch=DECODE_BATCH)[0] for f in frames])
    )
    for index, frame in enumerate(decoded):
        save_image(out / f"frame_{index:02d}.png", frame)
    save_image(out / "interpolation.png", grid([list(decoded)]))
    _write_csv(out / "interpolation.csv", ("frame", "lambda"),
               [(i, repr(i / (args.steps - 1))) for i in range(args.steps)])
    print(f"Wrote {len(frames)} frames to {out}")
    return 0


def _load_folder_file(path: Path, size):
    path = Path(path)
    images = load_images([path], path.parent, tuple(size))
    if len(images) == 0:
        raise DatasetError(f"no images: cannot decode '{path}'")
    return images.images[0], images.names[0]


def cmd_fit_distribution(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    images = _load_folder(args.input, model.target_size)
    write_run_config(cfg)
    features = model.source.extract(images.images, images.names)
    dist = fit_distribution(list(features), mode=args.dist_mode, bins=args.bins)
    save_distribution(out / "distribution.ivkt", dist)
    print(f"Fitted {dist.mode} distribution over {dist.sample_count} vectors "
          f"({dist.dimensions} dims, mean zero fraction {float(dist.zero_fraction.mean()):.3f})")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    dist = load_distribution(args.distribution)
    write_run_config(cfg)

    rng = np.random.default_rng(cfg.seed)
    samples = sample_features(dist, alpha=args.alpha, rng=rng, count=args.count)
    decoded = model.upsample(
        np.stack([model.decode(s[None].astype(np.float32), batch=DECODE_BATCH)[0] for s in samples])
    )
    rows = []
    for index, (vector, image) in enumerate(zip(samples, decoded)):
        save_image(out / f"sample_{index:03d}.png", image)
        rows.append([index, repr(args.alpha), repr(float(np.mean(vector != 0)))])
    _write_csv(out / "samples.csv", ("sample", "alpha", "nonzero_fraction"), rows)
    save_image(out / "samples.png", grid([list(decoded)]))
    print(f"Sampled {args.count} feature vectors (alpha={args.alpha}) into {out}")
    return 0


def cmd_neurons(args: argparse.Namespace) -> int:
    """Decode feature vectors with a single active unit."""
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    model = _load_model(args.checkpoint)
    write_run_config(cfg)
    shape = model.source.feature_shape(model.target_size)
    units = args.units or list(range(min(args.count, int(np.prod(shape)))))

    decoded = []
    for unit in units:
        vector = activate_single_unit(shape, unit, args.value).astype(np.float32)
        decoded.append(model.upsample(model.decode(vector, batch=DECODE_BATCH))[0])
        save_image(out / f"unit_{unit:05d}.png", decoded[-1])
    save_image(out / "units.png", grid([decoded]))
    print(f"Decoded {len(units)} single-unit vectors into {out}")
    return 0


# ==================== Parser ====================

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="RunConfig JSON file")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--seed", type=int, help="Seed for every random choice")


def _feature_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--features", choices=["hog", "lbp", "sift_grid", "encoder_layer"])
    parser.add_argument("--cell", type=int, help="Cell size (sift grid d)")
    parser.add_argument("--tap", help="Encoder tap (conv1..conv5, fc6..fc8)")
    parser.add_argument("--encoder-checkpoint", type=Path)
    parser.add_argument("--keypoint-dir", type=Path, help="External keypoint files")


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, help="Image directory")
    parser.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    parser.add_argument("--split", type=float)
    parser.add_argument("--max-images", type=int)
    parser.add_argument("--width", type=float, help="Channel multiplier")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--log-every", type=int)
    parser.add_argument("--eval-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invertkit", description="Invert image feature representations")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("extract", help="Write feature maps for a directory of images")
    _common(p)
    _feature_flags(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    p.set_defaults(handler=cmd_extract)

    p = commands.add_parser("train", help="Train an inversion decoder")
    _common(p)
    _feature_flags(p)
    _train_flags(p)
    p.add_argument("--net", choices=["hog", "lbp", "sift", "conv", "fc"])
    p.add_argument("--mode", choices=["fixed_encoder", "autoencoder"])
    p.add_argument("--montage-every", type=int)
    p.add_argument("--resume", type=Path, help="Continue from a checkpoint")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("train-encoder", help="Train the toy classification encoder")
    _common(p)
    _train_flags(p)
    p.add_argument("--classes", type=int, help="Defaults to the number of class sub-directories")
    p.set_defaults(handler=cmd_train_encoder)

    p = commands.add_parser("invert", help="Reconstruct images from their features")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--input", type=Path, help="Image directory")
    source.add_argument("--feature-dir", type=Path, help="Directory of .fmap files")
    p.set_defaults(handler=cmd_invert)

    p = commands.add_parser("evaluate", help="Normalized reconstruction error")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path, help="Image directory")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--split", type=float)
    p.add_argument("--all-images", action="store_true", help="Score every image, not the test split")
    p.add_argument("--baseline", choices=["identity", "mean"])
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("perturb", help="Decode binarized, dropped or top-k features")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--kind", action="append", choices=[k.value for k in PerturbationKind])
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(handler=cmd_perturb)

    p = commands.add_parser("interpolate", help="Decode features interpolated between two images")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--first", type=Path, required=True)
    p.add_argument("--second", type=Path, required=True)
    p.add_argument("--steps", type=int, default=6)
    p.set_defaults(handler=cmd_interpolate)

    p = commands.add_parser("fit-distribution", help="Fit per-dimension feature statistics")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--dist-mode", choices=["histogram", "trunc_gaussian"], default="histogram")
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(handler=cmd_fit_distribution)

    p = commands.add_parser("sample", help="Decode random feature vectors")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--distribution", type=Path, required=True)
    p.add_argument("--count", type=int, default=7)
    p.add_argument("--alpha", type=float, default=2.0)
    p.set_defaults(handler=cmd_sample)

    p = commands.add_parser("neurons", help="Decode single active units")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--units", type=int, nargs="+")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--value", type=float, default=1.0)
    p.set_defaults(handler=cmd_neurons)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=get_settings().log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except InvertKitError as e:
        logger.error("[CLI] %s failed: %s", args.command, e.detail)
        print(f"Error: {e.detail}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
