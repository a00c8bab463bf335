"""The convolutional keyword-prediction model over speech frames.

Assembles the layer stack (1-D ReLU convolutions with non-overlapping max
pooling, a global max pool over time, a fully-connected ReLU layer, an
optional linear bottleneck, and a sigmoid output), the summed per-keyword
cross-entropy loss, minibatch Adam training with early stopping, binary
checkpointing, and bottleneck-embedding export.

The default configuration is the full-scale architecture; `ModelConfig.desk()`
is a small variant whose training and gradient checks run in seconds.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .corpus import Corpus, Vocabulary, bow_targets
from .errors import (
    CorruptionError,
    DataFormatError,
    DimensionError,
    NumericalError,
    UsageError,
)
from .features import pad_or_truncate
from .nncore import AdamConfig, Conv1D, Dense, GlobalMaxPool, MaxPool1D, ReLU, Sigmoid

CHECKPOINT_MAGIC = b"VGSR"
CHECKPOINT_VERSION = 1

LOSS_CLAMP = 1e-7

GLOBAL_POOL = "global"


@dataclass
class ModelConfig:
    input_dim: int = 39
    vocab_size: int = 1000
    conv_layers: tuple = ((64, 9, 3), (256, 10, 3), (1024, 11, GLOBAL_POOL))
    fc_dim: int = 3000
    bottleneck_dim: int | None = None
    max_frames: int = 800
    seed: int = 0
    epochs: int = 25
    batch_size: int = 8
    patience: int = 5
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        for name in ("input_dim", "vocab_size", "fc_dim", "max_frames", "epochs",
                     "batch_size", "patience"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.bottleneck_dim is not None and self.bottleneck_dim <= 0:
            raise UsageError(f"bottleneck_dim must be positive, got {self.bottleneck_dim}")
        if not self.conv_layers:
            raise UsageError("at least one convolution layer is required")
        self.conv_layers = tuple(tuple(spec) for spec in self.conv_layers)
        t = self.max_frames
        for i, (filters, width, pool) in enumerate(self.conv_layers):
            if filters <= 0 or width <= 0:
                raise UsageError(f"conv layer {i}: filters and width must be positive")
            if t < width:
                raise UsageError(
                    f"conv layer {i} spans {width} frames but only {t} remain at "
                    f"max_frames={self.max_frames}"
                )
            t = t - width + 1
            if pool == GLOBAL_POOL:
                if i != len(self.conv_layers) - 1:
                    raise UsageError("global pooling is only supported on the last conv layer")
                t = 1
            else:
                if pool <= 0:
                    raise UsageError(f"conv layer {i}: pool width must be positive")
                if t < pool:
                    raise UsageError(
                        f"conv layer {i}: pool width {pool} exceeds remaining length {t}"
                    )
                t //= pool

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration for tests and CPU experiments.  The gentler
        pooling (2, 2) keeps enough time resolution at 100 frames for the
        final convolution to localise short words."""
        base = dict(
            input_dim=13,
            vocab_size=20,
            conv_layers=((8, 9, 2), (16, 5, 2), (32, 3, GLOBAL_POOL)),
            fc_dim=64,
            max_frames=100,
            epochs=40,
            patience=8,
            adam=AdamConfig(learning_rate=3e-3),
        )
        base.update(overrides)
        return cls(**base)

    def receptive_field(self) -> int:
        """Input frames feeding one unit of the last convolution's output."""
        rf, jump = 1, 1
        for filters, width, pool in self.conv_layers:
            rf += (width - 1) * jump
            if pool != GLOBAL_POOL:
                rf += (pool - 1) * jump
                jump *= pool
        return rf

    def pool_chunk(self) -> int:
        """Product of the finite pool widths; appended lengths that are
        multiples of this keep pooling windows aligned."""
        chunk = 1
        for _, _, pool in self.conv_layers:
            if pool != GLOBAL_POOL:
                chunk *= pool
        return chunk

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "vocab_size": self.vocab_size,
            "conv_layers": [list(spec) for spec in self.conv_layers],
            "fc_dim": self.fc_dim,
            "bottleneck_dim": self.bottleneck_dim,
            "max_frames": self.max_frames,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "adam": self.adam.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {
            "input_dim", "vocab_size", "conv_layers", "fc_dim", "bottleneck_dim",
            "max_frames", "seed", "epochs", "batch_size", "patience", "adam",
        }
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown model config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "adam" in kwargs and not isinstance(kwargs["adam"], AdamConfig):
            kwargs["adam"] = AdamConfig.from_dict(kwargs["adam"])
        if "conv_layers" in kwargs:
            kwargs["conv_layers"] = tuple(tuple(spec) for spec in kwargs["conv_layers"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


class SpeechModel:
    """Maps a T x D frame matrix to per-keyword scores in (0, 1)."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        layers = []
        channels = config.input_dim
        for i, (filters, width, pool) in enumerate(config.conv_layers):
            layers.append(Conv1D(width, channels, filters, rng=rng, name=f"conv{i}"))
            layers.append(ReLU())
            layers.append(GlobalMaxPool() if pool == GLOBAL_POOL else MaxPool1D(pool))
            channels = filters
        layers.append(Dense(channels, config.fc_dim, rng=rng, name="fc"))
        layers.append(ReLU())
        self._bottleneck_index = None
        last_dim = config.fc_dim
        if config.bottleneck_dim is not None:
            layers.append(Dense(last_dim, config.bottleneck_dim, rng=rng, name="bottleneck"))
            self._bottleneck_index = len(layers) - 1
            last_dim = config.bottleneck_dim
        layers.append(Dense(last_dim, config.vocab_size, rng=rng, name="out"))
        layers.append(Sigmoid())
        self.layers = layers

    def parameters(self) -> list[nncore.Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"expected a T x {self.config.input_dim} frame matrix, got shape {x.shape}"
            )
        rf = self.config.receptive_field()
        if x.shape[0] < rf:
            raise DimensionError(
                f"input has {x.shape[0]} frames but the network needs at least {rf}; "
                "pad the input (see pad_or_truncate)"
            )
        return x

    def forward(self, x) -> np.ndarray:
        """Scores for every vocabulary entry, each strictly in (0, 1).
        Caches activations, enabling a subsequent backward()."""
        h = self._check_input(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h.reshape(-1)

    def backward(self, score_grad) -> None:
        """Accumulates parameter gradients from d(loss)/d(scores)."""
        g = np.asarray(score_grad, dtype=np.float64).reshape(1, -1)
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def bottleneck_activation(self, x) -> np.ndarray:
        if self._bottleneck_index is None:
            raise UsageError("this model was built without a bottleneck layer")
        h = self._check_input(x)
        for layer in self.layers[: self._bottleneck_index + 1]:
            h = layer.forward(h)
        return h.reshape(-1)


def summed_cross_entropy(scores, targets) -> float:
    """Sum over keywords of the binary cross-entropy between a score and
    its soft target, with scores clamped to [1e-7, 1 - 1e-7] before logs."""
    f = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if f.shape != y.shape:
        raise DimensionError(f"scores have length {f.size}, targets {y.size}")
    fc = np.clip(f, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return float(-np.sum(y * np.log(fc) + (1.0 - y) * np.log(1.0 - fc)))


def summed_cross_entropy_grad(scores, targets) -> np.ndarray:
    """d loss / d scores; zero where the clamp is active."""
    f = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    fc = np.clip(f, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    grad = -(y / fc - (1.0 - y) / (1.0 - fc))
    grad[(f < LOSS_CLAMP) | (f > 1.0 - LOSS_CLAMP)] = 0.0
    return grad


def bottleneck_embed(model: SpeechModel, x) -> np.ndarray:
    """The pre-output hidden activation, for external analysis."""
    return model.bottleneck_activation(x)


class LossFragment:
    """Adapts (model, input-target pairs) to the grad_check protocol: the
    scalar is the mean over examples of the per-example summed loss."""

    def __init__(self, model: SpeechModel, examples):
        self.model = model
        self.examples = list(examples)

    def parameters(self):
        return self.model.parameters()

    def value(self, _x=None) -> float:
        total = 0.0
        for x, y in self.examples:
            total += summed_cross_entropy(self.model.forward(x), y)
        return total / len(self.examples)

    def value_and_grad(self, _x=None) -> float:
        self.model.zero_grads()
        total = 0.0
        scale = 1.0 / len(self.examples)
        for x, y in self.examples:
            f = self.model.forward(x)
            total += summed_cross_entropy(f, y)
            self.model.backward(summed_cross_entropy_grad(f, y) * scale)
        return total * scale


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    seed: int
    targets: str
    initial_train_loss: float
    train_loss: list = field(default_factory=list)
    dev_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    final_train_loss: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "targets": self.targets,
            "initial_train_loss": self.initial_train_loss,
            "train_loss": self.train_loss,
            "dev_loss": self.dev_loss,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "final_train_loss": self.final_train_loss,
        }


def _training_pairs(model: SpeechModel, corpus: Corpus, records, targets: str,
                    vocab: Vocabulary | None):
    cfg = model.config
    pairs = []
    for rec in records:
        feats = pad_or_truncate(corpus.load_features(rec), cfg.max_frames)
        if feats.shape[1] != cfg.input_dim:
            raise DimensionError(
                f"record {rec.utt_id!r} has {feats.shape[1]}-dim frames, "
                f"model expects {cfg.input_dim}"
            )
        if targets == "vision":
            if rec.tags is None:
                raise UsageError(f"record {rec.utt_id!r} has no tag vector")
            y = np.asarray(rec.tags, dtype=np.float64)
        elif targets == "bow":
            if vocab is None:
                raise UsageError("bow targets need a vocabulary")
            if rec.transcription is None:
                raise UsageError(f"record {rec.utt_id!r} has no transcription")
            y = bow_targets(rec.transcription, vocab)
        else:
            raise UsageError(f"targets must be 'vision' or 'bow', got {targets!r}")
        if y.size != cfg.vocab_size:
            raise DimensionError(
                f"record {rec.utt_id!r} has a length-{y.size} target, "
                f"model expects {cfg.vocab_size}"
            )
        pairs.append((feats, y))
    return pairs


def _mean_loss(model: SpeechModel, pairs) -> float:
    return sum(summed_cross_entropy(model.forward(x), y) for x, y in pairs) / len(pairs)


def fit(model: SpeechModel, corpus: Corpus, targets: str = "vision",
        vocab: Vocabulary | None = None) -> TrainingLog:
    """Minibatch Adam on the mean per-example summed cross-entropy.

    Shuffling is driven by the model seed, so a rebuilt model plus the same
    corpus reproduces identical parameters.  Early stopping watches the dev
    split's loss with the configured patience and restores the best epoch's
    parameters; with no dev split the model trains for the full epoch
    budget.
    """
    cfg = model.config
    train_pairs = _training_pairs(model, corpus, corpus.split("train"), targets, vocab)
    if not train_pairs:
        raise UsageError("training split is empty")
    dev_pairs = _training_pairs(model, corpus, corpus.split("dev"), targets, vocab)

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    log = TrainingLog(
        seed=cfg.seed,
        targets=targets,
        initial_train_loss=_mean_loss(model, train_pairs),
    )

    best_dev = np.inf
    best_values = None
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model.zero_grads()
            scale = 1.0 / len(batch)
            batch_loss = 0.0
            for idx in batch:
                x, y = train_pairs[idx]
                f = model.forward(x)
                batch_loss += summed_cross_entropy(f, y)
                model.backward(summed_cross_entropy_grad(f, y) * scale)
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            nncore.adam_step(params, cfg.adam)
            epoch_loss += batch_loss
        log.train_loss.append(epoch_loss / len(train_pairs))
        log.stopped_epoch = epoch

        if dev_pairs:
            dev = _mean_loss(model, dev_pairs)
            if not np.isfinite(dev):
                raise NumericalError(f"non-finite dev loss at epoch {epoch}")
            log.dev_loss.append(dev)
            if dev < best_dev:
                best_dev = dev
                best_values = [p.value.copy() for p in params]
                log.best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
        else:
            log.best_epoch = epoch

    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    log.final_train_loss = _mean_loss(model, train_pairs)
    return log


def score_corpus(model: SpeechModel, corpus: Corpus, records) -> np.ndarray:
    """Stacked forward scores, one row per record."""
    rows = []
    for rec in records:
        feats = pad_or_truncate(corpus.load_features(rec), model.config.max_frames)
        rows.append(model.forward(feats))
    return np.vstack(rows) if rows else np.zeros((0, model.config.vocab_size))


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model: SpeechModel, path) -> None:
    """Binary layout: magic, u32 version, u32 config length, UTF-8 JSON
    config, then each parameter as little-endian float32 in layer order."""
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for p in model.parameters():
            fh.write(p.value.astype("<f4").tobytes())


def load_checkpoint(path) -> SpeechModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        header = fh.read(8)
        if len(header) < 8:
            raise CorruptionError(f"{path}: truncated header")
        version, config_len = struct.unpack("<II", header)
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        config_blob = fh.read(config_len)
        if len(config_blob) < config_len:
            raise CorruptionError(f"{path}: truncated config block")
        try:
            config = ModelConfig.from_dict(json.loads(config_blob.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, UsageError) as exc:
            raise CorruptionError(f"{path}: unreadable config block ({exc})") from exc
        payload = fh.read()
    model = SpeechModel(config)
    offset = 0
    for p in model.parameters():
        nbytes = 4 * p.value.size
        chunk = payload[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise CorruptionError(
                f"{path}: truncated parameter block for {p.name!r}"
            )
        p.value[...] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(p.value.shape)
        offset += nbytes
    if offset != len(payload):
        raise CorruptionError(f"{path}: {len(payload) - offset} trailing bytes")
    return model
