"""
Adam optimization of inversion decoders, autoencoders and the toy encoder.

Both trainers share one step loop: draw a mini-batch from the seeded
generator, compute loss and gradients, update with Adam, record the loss. The
generator state, Adam moments and loss history go into every checkpoint, so a
resumed run continues the exact trajectory of an uninterrupted one.
"""
import copy
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine import ops
from engine.graph import Network
from engine.tensor import Tensor
from schemas.errors import ConfigurationError, DatasetError, DivergenceError, NumericalError
from schemas.network_schemas import EncoderSpec
from schemas.run_schemas import TrainConfig, TrainingMode
from storage.models import ENCODER_PREFIX, AdamState, Checkpoint
from utilities.imaging import montage, resize_bilinear, save_image
from .dataset_service import ImageSet
from .evaluation import normalized_error
from .inversion_pipeline import (
    EncoderFeatureSource,
    InversionModel,
    center,
    fit_to_decoder,
    source_metadata,
)

logger = logging.getLogger(__name__)

METRICS_HEADER = ("step", "loss", "lr", "normalized_error")
MONTAGE_SAMPLES = 4


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, lr: Optional[float] = None) -> AdamState:
    """
    One bias-corrected Adam update, in place on ``params`` and ``state``.

    Args:
        params: Parameter arrays, updated in place
        grads: Gradients keyed like ``params``
        state: Moments and step counter, updated in place
        cfg: beta1, beta2 and epsilon
        lr: Learning rate for this step (defaults to cfg.lr)

    Raises:
        NumericalError: A gradient contains NaN or Inf
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(name.rsplit(".", 1)[0], f"gradient of '{name}' is not finite")

    lr = cfg.lr if lr is None else lr
    t = state.step + 1
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for name, param in params.items():
        grad = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
    state.step = t
    return state


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: np.ndarray
    test_error: Optional[float] = None
    accuracy: Optional[float] = None

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if len(self.losses) else float("nan")


class MetricsWriter:
    """
    Appends ``step,loss,lr,normalized_error`` rows.

    A fresh writer truncates the file; a resuming writer keeps the rows up to
    ``resume_step`` and drops anything a crashed run wrote after it.
    """

    def __init__(self, path: Path, resume_step: Optional[int] = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        kept = []
        if resume_step is not None and self.path.exists():
            with self.path.open(newline="") as f:
                reader = csv.reader(f)
                next(reader, None)
                kept = [row for row in reader if row and int(row[0]) <= resume_step]
        with self.path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_HEADER)
            writer.writerows(kept)

    def write(self, step: int, loss: float, lr: float, error: Optional[float] = None) -> None:
        with self.path.open("a", newline="") as f:
            csv.writer(f).writerow([step, repr(float(loss)), repr(float(lr)),
                                    "" if error is None else repr(float(error))])


class _AdamLoop:
    """Mini-batch sampling, Adam updates, loss history, divergence and best-state tracking."""

    tag = "Train"

    def __init__(self, cfg: TrainConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.adam = AdamState()
        self.losses: List[float] = []
        self.best_loss = float("inf")
        self.best_checkpoint: Optional[Checkpoint] = None
        self.metrics: Optional[MetricsWriter] = None

    # subclasses provide these
    def trainable(self) -> Dict[str, Tensor]:
        raise NotImplementedError

    def compute(self, indices: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def checkpoint(self) -> Checkpoint:
        raise NotImplementedError

    def output_layer(self) -> str:
        raise NotImplementedError

    def after_step(self, done: int, total: int, loss: float, lr: float) -> None:
        if self.metrics is not None:
            self.metrics.write(done, loss, lr)

    def _restore_loop(self, checkpoint: Checkpoint) -> None:
        self.adam = checkpoint.adam.copy()
        if checkpoint.rng_state is not None:
            self.rng.bit_generator.state = copy.deepcopy(checkpoint.rng_state)
        self.losses = [float(x) for x in checkpoint.loss_history]
        self.best_loss = min(self.losses) if self.losses else float("inf")
        self.best_checkpoint = checkpoint

    def _rng_state(self) -> dict:
        return copy.deepcopy(self.rng.bit_generator.state)

    def _check_loss(self, loss: float, step: int) -> None:
        if np.isnan(loss):
            raise NumericalError(self.output_layer(), f"loss is NaN at step {step}")
        if not self.losses:
            return
        initial = self.losses[0]
        if not np.isfinite(loss) or loss > self.cfg.divergence_factor * initial:
            raise DivergenceError(
                f"loss {loss:.4g} exceeded {self.cfg.divergence_factor:g}x the initial loss "
                f"{initial:.4g} at step {step}",
                checkpoint=self.best_checkpoint,
            )

    def run(self, count: int, stop_after: Optional[int] = None) -> None:
        """Steps from the current Adam step up to the configured total (or ``stop_after``)."""
        total = self.cfg.total_steps(count)
        end = total if stop_after is None else min(total, stop_after)
        params = {name: tensor.data for name, tensor in self.trainable().items()}
        batch = min(self.cfg.batch, count)

        for step in range(self.adam.step, end):
            indices = self.rng.choice(count, size=batch, replace=False)
            lr = self.cfg.lr_at(step, total)
            loss, grads = self.compute(indices)
            self._check_loss(loss, step + 1)
            if loss < self.best_loss:
                self.best_loss = loss
                self.best_checkpoint = self.checkpoint()
            adam_step(params, grads, self.adam, self.cfg, lr)
            self.losses.append(loss)

            done = self.adam.step
            if done == 1 or done % self.cfg.log_every == 0 or done == total:
                logger.info("[%s] step %d/%d loss=%.6f lr=%.3g", self.tag, done, total, loss, lr)
            self.after_step(done, total, loss, lr)


class InversionTrainer(_AdamLoop):
    """
    Trains a decoder to map features back to images (MSE on centered targets).

    In fixed-encoder mode the feature source is evaluated once up front and
    never receives a gradient. In autoencoder mode the toy encoder sits in
    front of the decoder and its parameters are updated too.

    Args:
        model: Decoder plus feature source
        cfg: Optimizer and schedule
        seed: Seed of the mini-batch generator
        output_dir: Receives metrics.csv and montages when set
        montage_every: Steps between reconstruction montages
        metadata: Extra JSON-serializable checkpoint metadata
    """

    def __init__(self, model: InversionModel, cfg: TrainConfig, seed: int = 0,
                 output_dir: Optional[Path] = None, montage_every: int = 500,
                 metadata: Optional[dict] = None):
        super().__init__(cfg, seed)
        self.autoencoder = cfg.mode == TrainingMode.AUTOENCODER
        if self.autoencoder and not model.source.differentiable:
            raise ConfigurationError(
                f"autoencoder mode needs a trainable encoder, '{model.source.extractor}' features are fixed"
            )
        self.model = model
        self.seed = seed
        self.output_dir = None if output_dir is None else Path(output_dir)
        self.montage_every = montage_every
        self.metadata = dict(metadata or {})
        self.test_error: Optional[float] = None

        self._replicas = [(model.decoder, model.source)]
        if cfg.workers > 1:
            for _ in range(cfg.workers - 1):
                source = model.source.clone() if self.autoencoder else model.source
                self._replicas.append((model.decoder.clone(), source))

        self._images: Optional[np.ndarray] = None
        self._targets: Optional[np.ndarray] = None
        self._features: Optional[np.ndarray] = None
        self._test: Optional[ImageSet] = None
        self._test_features: Optional[np.ndarray] = None

    def output_layer(self) -> str:
        return self.model.decoder.spec.layers[-1].name

    def trainable(self) -> Dict[str, Tensor]:
        params = dict(self.model.decoder.parameters)
        if self.autoencoder:
            params.update(self.model.source.prefixed_parameters())
        return params

    def prepare_targets(self, images: np.ndarray) -> np.ndarray:
        """Targets at the decoder's output resolution, centered on zero."""
        size = self.model.output_size
        if (images.shape[3], images.shape[2]) != size:
            images = np.stack([resize_bilinear(image, size) for image in images])
        return center(images)

    def features_of(self, images: ImageSet) -> np.ndarray:
        return fit_to_decoder(self.model.source.extract(images.images, images.names), self.model.decoder.spec)

    def _shard(self, replica, indices: np.ndarray, batch: int) -> Tuple[float, Dict[str, np.ndarray]]:
        decoder, source = replica
        decoder.zero_grad()
        if self.autoencoder:
            source.network.zero_grad()
            encoded = source.forward(self._images[indices])
            features = fit_to_decoder(encoded, decoder.spec)
        else:
            features = self._features[indices]
        prediction = decoder.forward(features).data
        loss, grad = ops.mse_loss(prediction, self._targets[indices], batch=batch)
        input_grad = decoder.backward(grad)
        grads = decoder.gradients(check_finite=True)
        if self.autoencoder:
            source.backward(input_grad.reshape(encoded.shape))
            for name, value in source.network.gradients(check_finite=True).items():
                grads[ENCODER_PREFIX + name] = value
        return loss, grads

    def compute(self, indices: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        batch = len(indices)
        if len(self._replicas) == 1:
            return self._shard(self._replicas[0], indices, batch)

        shards = [s for s in np.array_split(indices, len(self._replicas)) if len(s)]
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(lambda args: self._shard(*args, batch),
                                    zip(self._replicas, shards)))
        # fixed shard order keeps the reduction deterministic
        loss = sum(r[0] for r in results)
        grads = {name: np.array(value, copy=True) for name, value in results[0][1].items()}
        for _, shard_grads in results[1:]:
            for name, value in shard_grads.items():
                grads[name] += value
        return loss, grads

    def checkpoint(self) -> Checkpoint:
        params = {name: t.data.copy() for name, t in self.model.decoder.parameters.items()}
        encoder = None
        if isinstance(self.model.source, EncoderFeatureSource):
            encoder = self.model.source.encoder
            for name, t in self.model.source.prefixed_parameters().items():
                params[name] = t.data.copy()
        metadata = dict(self.metadata)
        metadata.update(
            feature_source=source_metadata(self.model.source),
            target_size=list(self.model.target_size),
            mode=self.cfg.mode.value,
            seed=self.seed,
        )
        return Checkpoint(
            network=self.model.decoder.spec,
            parameters=params,
            adam=self.adam.copy(),
            rng_state=self._rng_state(),
            loss_history=np.asarray(self.losses, dtype=np.float64),
            encoder=encoder,
            metadata=metadata,
        )

    def restore(self, checkpoint: Checkpoint) -> None:
        """Continue from ``checkpoint``: parameters, Adam moments, generator and history."""
        self.model.decoder.load_state_dict(checkpoint.decoder_parameters())
        encoder_params = checkpoint.encoder_parameters()
        if encoder_params and isinstance(self.model.source, EncoderFeatureSource):
            self.model.source.network.load_state_dict(encoder_params)
        self._restore_loop(checkpoint)
        logger.info("[Train] resuming at step %d", checkpoint.step)

    def evaluate(self, test: ImageSet) -> float:
        if self.autoencoder or self._test_features is None or self._test is not test:
            self._test = test
            self._test_features = self.features_of(test)
        reconstructions = self.model.decode(self._test_features)
        return normalized_error(reconstructions, test.images, seed=self.seed)

    def save_montage(self, done: int, images: ImageSet) -> Path:
        sample = images.subset(range(min(MONTAGE_SAMPLES, len(images))))
        reconstructions = self.model.upsample(self.model.decode(self.features_of(sample)))
        path = self.output_dir / f"montage_{done:06d}.png"
        save_image(path, montage(list(zip(sample.images, reconstructions))))
        return path

    def after_step(self, done: int, total: int, loss: float, lr: float) -> None:
        error = None
        if self._test is not None and (done % self.cfg.eval_every == 0 or done == total):
            error = self.evaluate(self._test)
            self.test_error = error
            logger.info("[Train] step %d normalized error %.4f", done, error)
        if self.metrics is not None:
            self.metrics.write(done, loss, lr, error)
        if self.output_dir is not None and (done % self.montage_every == 0 or done == total):
            self.save_montage(done, self._test if self._test is not None else self._train)

    def train(self, train: ImageSet, test: Optional[ImageSet] = None,
              stop_after: Optional[int] = None) -> TrainResult:
        """
        Minimize the reconstruction loss over ``train``.

        Args:
            train: Training images
            test: Optional held-out images for the normalized error
            stop_after: Stop once this many total steps are done

        Raises:
            DivergenceError: Loss exceeded divergence_factor x the initial loss
            NumericalError: NaN loss or non-finite gradients
        """
        if len(train) == 0:
            raise DatasetError("no training images")
        self._train = train
        self._test = test
        if self.output_dir is not None:
            self.metrics = MetricsWriter(self.output_dir / "metrics.csv", resume_step=self.adam.step or None)
        self._test_features = None
        self._images = train.images
        self._targets = self.prepare_targets(train.images)
        if not self.autoencoder:
            self._features = self.features_of(train)
        logger.info("[Train] %s decoder on %d images, mode %s, %d steps",
                    self.model.decoder.spec.name, len(train), self.cfg.mode.value,
                    self.cfg.total_steps(len(train)))

        self.run(len(train), stop_after)
        return TrainResult(
            checkpoint=self.checkpoint(),
            losses=np.asarray(self.losses, dtype=np.float64),
            test_error=self.test_error,
        )


class EncoderTrainer(_AdamLoop):
    """Trains the toy encoder as a classifier with softmax cross-entropy on fc8."""

    tag = "Encoder"

    def __init__(self, encoder: EncoderSpec, network: Network, cfg: TrainConfig, seed: int = 0,
                 metadata: Optional[dict] = None):
        super().__init__(cfg, seed)
        self.encoder = encoder
        self.network = network
        self.metadata = dict(metadata or {})
        self._inputs: Optional[np.ndarray] = None
        self._labels: Optional[np.ndarray] = None

    def output_layer(self) -> str:
        return self.encoder.taps.get("fc8", self.encoder.network.layers[-1].name)

    def trainable(self) -> Dict[str, Tensor]:
        return dict(self.network.parameters)

    def compute(self, indices: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        self.network.zero_grad()
        logits = self.network.forward(self._inputs[indices]).data
        loss, grad = ops.softmax_cross_entropy(logits, self._labels[indices])
        self.network.backward(grad)
        return loss, self.network.gradients(check_finite=True)

    def predict(self, images: np.ndarray, batch: int = 16) -> np.ndarray:
        labels = []
        for start in range(0, len(images), batch):
            logits = self.network.forward(center(images[start:start + batch])).data
            labels.append(logits.reshape(logits.shape[0], -1).argmax(axis=1))
        return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)

    def accuracy(self, images: ImageSet) -> float:
        return float(np.mean(self.predict(images.images) == images.labels))

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            network=self.encoder.network,
            parameters={name: t.data.copy() for name, t in self.network.parameters.items()},
            adam=self.adam.copy(),
            rng_state=self._rng_state(),
            loss_history=np.asarray(self.losses, dtype=np.float64),
            encoder=self.encoder,
            metadata=dict(self.metadata),
        )

    def restore(self, checkpoint: Checkpoint) -> None:
        self.network.load_state_dict(checkpoint.decoder_parameters())
        self._restore_loop(checkpoint)

    def train(self, train: ImageSet, test: Optional[ImageSet] = None,
              stop_after: Optional[int] = None) -> TrainResult:
        if len(train) == 0:
            raise DatasetError("no training images")
        if int(train.labels.max()) >= self.encoder.classes:
            raise ConfigurationError(
                f"dataset has {int(train.labels.max()) + 1} classes, the encoder only {self.encoder.classes}"
            )
        self._inputs = center(train.images)
        self._labels = train.labels
        self.run(len(train), stop_after)
        accuracy = None if test is None else self.accuracy(test)
        if accuracy is not None:
            logger.info("[Encoder] test accuracy %.3f", accuracy)
        return TrainResult(
            checkpoint=self.checkpoint(),
            losses=np.asarray(self.losses, dtype=np.float64),
            accuracy=accuracy,
        )
