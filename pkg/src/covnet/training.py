"""Mini-batch training with Adam, validation early stopping and JSON checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from covnet import nn
from covnet.mapping import PairBatchSet, map_dataset
from covnet.model import VARIANTS, Model, build_model, forward_loss, resolve_variant
from covnet.nn import ContractError, LayerSpec, LayerState

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "covnet-checkpoint"
CHECKPOINT_VERSION = 1

# sub-seed streams derived from TrainConfig.seed
_INIT, _VAL_MAP, _EPOCH_MAP, _DROPOUT = range(4)


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found, expected):
        super().__init__(f"checkpoint version {found} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


@dataclass
class TrainConfig:
    variant: str = "covnet-v1"
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 42
    patience: int = 20
    resample_per_epoch: bool = True
    margin: float | None = None
    hidden: list[int] = field(default_factory=lambda: [32])
    q: int = 16
    dropout: float = 0.0
    batchnorm: bool = False
    siamese_mode: str = "bce"

    def validate(self):
        self.variant = resolve_variant(self.variant)
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")
        if self.q < 2:
            raise ContractError("embedding dimension q must be >= 2")
        needs_two = self.variant == "npair" or self.batchnorm or VARIANTS[self.variant].tail == "sigmoid"
        if self.batch_size < (2 if needs_two else 1):
            raise ContractError(f"batch_size {self.batch_size} too small for {self.variant}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainHistory:
    initial_loss: float
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]


def model_from_config(config: TrainConfig, in_dim: int, n_classes: int) -> Model:
    rng = np.random.default_rng([config.seed, _INIT])
    return build_model(
        config.variant,
        in_dim,
        n_classes,
        rng,
        hidden=tuple(config.hidden),
        q=config.q,
        dropout=config.dropout,
        batchnorm=config.batchnorm,
        margin=config.margin,
        siamese_mode=config.siamese_mode,
    )


def _batches(n: int, batch_size: int, min_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= min_size:
            yield idx


def _needs_pairs_of_two(model: Model) -> bool:
    return model.variant == "npair" or any(s.spec.kind == "batchnorm" for s in model.layers)


def evaluate_loss(model: Model, X, mapped, batch_size: int = 1024) -> float:
    """Mean inference-mode loss over a mapped set; no parameter or buffer changes.

    Per-pair losses are averaged with batch-size weights, so the result does
    not depend on ``batch_size``.  The N-pair loss couples every pair in a
    batch and is always evaluated on the whole set at once.
    """
    n = len(mapped)
    if n == 0:
        raise ContractError("cannot evaluate an empty mapped set")
    if model.variant == "npair":
        batch_size = n
    total = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        loss, _ = forward_loss(model, X, mapped.subset(idx), nn.INFER, grads=False)
        total += loss * idx.size
    return total / n


def snapshot(model: Model) -> Model:
    return copy.deepcopy(model)


def train(train_set, val_set, config: TrainConfig, on_epoch=None) -> tuple[Model, TrainHistory]:
    """Fit ``config.variant`` on ``train_set``; returns the best-validation snapshot.

    Every epoch re-maps the training set (unless ``resample_per_epoch`` is
    off), shuffles, and takes one Adam step per mini-batch over all of Omega.
    The validation mapping is drawn once.  Training stops after ``patience``
    epochs without a strictly lower validation loss.
    """
    config.validate()
    if train_set.dim != val_set.dim or train_set.n_classes != val_set.n_classes:
        raise ContractError("train and validation sets differ in width or class count")
    model = model_from_config(config, train_set.dim, train_set.n_classes)
    mapping = model.spec.mapping
    val_mapped = map_dataset(mapping, val_set, np.random.default_rng([config.seed, _VAL_MAP]))
    min_batch = 2 if _needs_pairs_of_two(model) else 1
    params = model.parameters()
    adam = nn.AdamState.for_params(params)

    fixed = None
    if not config.resample_per_epoch:
        fixed = map_dataset(mapping, train_set, np.random.default_rng([config.seed, _EPOCH_MAP, 0]))
    first = fixed
    if first is None:
        first = map_dataset(mapping, train_set, np.random.default_rng([config.seed, _EPOCH_MAP, 1]))
    history = TrainHistory(initial_loss=evaluate_loss(model, train_set.X, first))

    best, best_val, stale = snapshot(model), np.inf, 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, _EPOCH_MAP, epoch])
        mapped = fixed if fixed is not None else map_dataset(mapping, train_set, rng)
        drop_rng = np.random.default_rng([config.seed, _DROPOUT, epoch])
        total, seen = 0.0, 0
        for b, idx in enumerate(_batches(len(mapped), config.batch_size, min_batch, rng)):
            try:
                loss, grads = forward_loss(model, train_set.X, mapped.subset(idx), nn.TRAIN, drop_rng)
            except nn.NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            nn.adam_step(adam, params, grads, config.lr)
            total += loss * idx.size
            seen += idx.size
        if seen == 0:
            raise TrainingError(f"epoch {epoch}: no batch of at least {min_batch} items")
        val_loss = evaluate_loss(model, val_set.X, val_mapped)
        if not np.isfinite(val_loss):
            raise TrainingError(f"epoch {epoch}: validation loss is {val_loss}")
        rec = EpochRecord(epoch, total / seen, val_loss, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d train %.6f val %.6f", epoch, rec.train_loss, rec.val_loss)
        if on_epoch is not None:
            on_epoch(rec)
        if val_loss < best_val:
            best, best_val, stale = snapshot(model), val_loss, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


# ---------------------------------------------------------------- checkpoints


def _array_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _array_from_json(d: dict) -> np.ndarray:
    a = np.array(d["data"], dtype=np.float64)
    return a.reshape(d["shape"])


def _layer_to_json(s: LayerState) -> dict:
    return {
        "spec": s.spec.to_dict(),
        "params": {k: _array_to_json(v) for k, v in s.params.items()},
        "buffers": {k: _array_to_json(v) for k, v in s.buffers.items()},
    }


def _layer_from_json(d: dict) -> LayerState:
    spec = LayerSpec.from_dict(d["spec"])
    ref = nn.init_layer(spec, np.random.default_rng(0))
    state = LayerState(
        spec,
        {k: _array_from_json(v) for k, v in d["params"].items()},
        {k: _array_from_json(v) for k, v in d["buffers"].items()},
    )
    for group, expect in (("params", ref.params), ("buffers", ref.buffers)):
        got = getattr(state, group)
        if got.keys() != expect.keys() or any(got[k].shape != expect[k].shape for k in got):
            raise MalformedCheckpointError(f"{spec.kind} layer has inconsistent {group}")
    return state


@dataclass
class Checkpoint:
    model: Model
    config: dict | None = None
    best_epoch: int | None = None
    extra: dict = field(default_factory=dict)


def checkpoint_document(model: Model, config: TrainConfig | dict | None = None, best_epoch=None, extra=None) -> dict:
    if isinstance(config, TrainConfig):
        config = config.to_dict()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "n_classes": model.n_classes,
        "margin": model.margin,
        "siamese_mode": model.siamese_mode,
        "seed": None if config is None else config.get("seed"),
        "best_epoch": best_epoch,
        "config": config,
        "embedding": [_layer_to_json(s) for s in model.embedding],
        "tail": [_layer_to_json(s) for s in model.tail],
        "extra": extra or {},
    }


def save_checkpoint(model: Model, path, config=None, best_epoch=None, extra=None) -> None:
    doc = checkpoint_document(model, config, best_epoch, extra)
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCheckpointError(f"{path}: not a valid checkpoint document ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise MalformedCheckpointError(f"{path}: not a covnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(doc.get("version"), CHECKPOINT_VERSION)
    try:
        model = Model(
            variant=resolve_variant(doc["variant"]),
            n_classes=int(doc["n_classes"]),
            embedding=[_layer_from_json(d) for d in doc["embedding"]],
            tail=[_layer_from_json(d) for d in doc["tail"]],
            margin=doc["margin"],
            siamese_mode=doc["siamese_mode"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise MalformedCheckpointError(f"{path}: {exc!r}") from None
    return Checkpoint(model, doc.get("config"), doc.get("best_epoch"), doc.get("extra") or {})
