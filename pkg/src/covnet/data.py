"""Datasets: synthetic Gaussian blobs, CSV and IDX loaders, splits, scaling."""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from covnet.nn import ContractError


class DataFormatError(ValueError):
    """A dataset file could not be parsed."""


class IdxError(DataFormatError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


class IdxTruncated(IdxError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Features ``X`` (N x p) with contiguous integer labels ``Y`` in [0, C).

    ``ids`` identify rows across splits; ``label_names[c]`` is the original
    label that was remapped to ``c``.
    """

    X: np.ndarray
    Y: np.ndarray
    n_classes: int
    ids: np.ndarray = None
    label_names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ContractError(f"X must be 2-D, got shape {X.shape}")
        Y = np.asarray(self.Y, dtype=np.int64).reshape(-1)
        if len(Y) != len(X):
            raise ContractError(f"{len(X)} rows but {len(Y)} labels")
        if len(Y) and (Y.min() < 0 or Y.max() >= self.n_classes):
            raise ContractError(f"labels outside [0, {self.n_classes})")
        ids = np.arange(len(Y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if len(ids) != len(Y) or len(np.unique(ids)) != len(ids):
            raise ContractError("ids must be unique, one per row")
        names = tuple(range(self.n_classes)) if self.label_names is None else tuple(self.label_names)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "label_names", names)

    def __len__(self):
        return len(self.Y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], Y=self.Y[idx], ids=self.ids[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.Y, minlength=self.n_classes)


# ---------------------------------------------------------------- generators


@dataclass
class BlobSpec:
    classes: int = 4
    per_class: int = 200
    dim: int = 20
    spread: float = 1.0
    center_scale: float = 5.0
    seed: int = 42
    superclasses: list[int] | None = None  # label -> superclass
    ratio: float = 5.0  # superclass / subclass center distance

    def validate(self):
        if self.classes < 1 or self.dim < 1:
            raise ContractError("need at least one class and one feature")
        if self.per_class < 2:
            raise ContractError(f"per_class must be >= 2 so every sample has a same-class partner, got {self.per_class}")
        if self.spread < 0 or self.center_scale < 0:
            raise ContractError("spread and center_scale must be nonnegative")
        if self.superclasses is not None:
            if len(self.superclasses) != self.classes or min(self.superclasses) < 0:
                raise ContractError("superclass map must assign a nonnegative superclass to every class")
            if self.ratio <= 0:
                raise ContractError("ratio must be positive")

    def to_dict(self):
        return asdict(self)


def _directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_around(centers, spec: BlobSpec, rng) -> LabeledDataset:
    Y = np.repeat(np.arange(spec.classes), spec.per_class)
    X = centers[Y] + spec.spread * rng.standard_normal((len(Y), spec.dim))
    return LabeledDataset(X, Y, spec.classes)


def gen_blobs(spec: BlobSpec) -> LabeledDataset:
    """Isotropic Gaussian clusters around centers of norm ``center_scale``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = spec.center_scale * _directions(rng, spec.classes, spec.dim)
    return _sample_around(centers, spec, rng)


def gen_hierarchical(spec: BlobSpec) -> LabeledDataset:
    """Blobs whose class centers cluster around shared superclass centers.

    Superclass centers have norm ``center_scale``; each class center is its
    superclass center plus an offset of norm ``center_scale / ratio``.
    """
    if spec.superclasses is None:
        raise ContractError("gen_hierarchical needs a superclass map")
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_super = max(spec.superclasses) + 1
    super_centers = spec.center_scale * _directions(rng, n_super, spec.dim)
    offsets = (spec.center_scale / spec.ratio) * _directions(rng, spec.classes, spec.dim)
    centers = super_centers[np.asarray(spec.superclasses)] + offsets
    return _sample_around(centers, spec, rng)


def generate(spec: BlobSpec) -> LabeledDataset:
    return gen_blobs(spec) if spec.superclasses is None else gen_hierarchical(spec)


# ---------------------------------------------------------------- CSV


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write ``label,f0,...`` rows with the original labels and repr-exact floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{k}" for k in range(dataset.dim)])
        for y, row in zip(dataset.Y, dataset.X):
            w.writerow([dataset.label_names[y]] + [repr(float(v)) for v in row])


def load_csv(path) -> LabeledDataset:
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}: empty file")
        if header[0].strip() != "label" or len(header) < 2:
            raise DataFormatError(f"{path}:1: header must be 'label,f0,...'")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(f"{path}:{line_no}: expected {width} columns, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataFormatError(f"{path}: non-finite feature values")
    names, Y = np.unique(np.array(labels), return_inverse=True)
    return LabeledDataset(X, Y, len(names), label_names=tuple(int(n) for n in names))


# ---------------------------------------------------------------- IDX

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def _read_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxTruncated(f"{what}: file shorter than its magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxTruncated(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise IdxTruncated(f"{what}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> LabeledDataset:
    images = _read_idx(image_bytes, _IDX_IMAGES, 3, "images")
    labels = _read_idx(label_bytes, _IDX_LABELS, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if X.shape[0] == 0:
        raise IdxError("IDX files contain no samples")
    names, Y = np.unique(labels, return_inverse=True)
    return LabeledDataset(X, Y, len(names), label_names=tuple(int(n) for n in names))


def load_idx(images_path, labels_path) -> LabeledDataset:
    return parse_idx(Path(images_path).read_bytes(), Path(labels_path).read_bytes())


# ---------------------------------------------------------------- split / scale


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    seed: int = 42

    def validate(self):
        fr = (self.train, self.val, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ContractError(f"split fractions must be >= 0 and sum to 1, got {fr}")

    def to_dict(self):
        return asdict(self)


def split(dataset: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Stratified train/val/test split; per-class counts round to the nearest integer."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.Y == c)
        idx = idx[rng.permutation(idx.size)]
        n = idx.size
        n_train = int(round(spec.train * n))
        n_val = int(round(spec.val * n))
        n_val = min(n_val, n - n_train)
        if spec.train > 0 and n_train == 0:
            raise ContractError(f"class {c} has {n} samples, too few to place one in train")
        bounds = [0, n_train, n_train + n_val, n]
        if spec.test == 0:
            bounds[2] = n
            if spec.val == 0:
                bounds[1] = n
        for k in range(3):
            parts[k].append(idx[bounds[k] : bounds[k + 1]])
    return tuple(dataset.take(np.sort(np.concatenate(p))) for p in parts)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        if len(X) == 0:
            raise ContractError("cannot fit scaling statistics on an empty set")
        return cls(X.mean(axis=0), X.std(axis=0))

    def apply(self, dataset: LabeledDataset) -> LabeledDataset:
        scale = np.where(self.std > 0, self.std, 1.0)
        center = np.where(self.std > 0, self.mean, 0.0)
        return replace(dataset, X=(dataset.X - center) / scale)

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Scale every set with train-only per-feature statistics; constant features pass through."""
    stats = Standardizer.fit(train.X)
    return (stats.apply(train), *[stats.apply(o) for o in others], stats)
