"""Pair and triplet mappings over a labeled dataset.

im   -- one same-class partner per sample, label = the sample's class
iim  -- one partner from every class per sample, label = unordered class pair
isim -- one matching (1) and one non-matching (0) partner per sample
tm   -- (anchor, positive, negative) triples

All samplers take an explicit ``numpy.random.Generator`` so a seed replays
the exact same set.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from covnet.nn import ContractError

MAPPING_KINDS = ("im", "iim", "isim", "tm")


class MappingError(ValueError):
    """The dataset cannot satisfy a mapping's sampling precondition."""


@dataclass(frozen=True)
class PairBatchSet:
    pairs: np.ndarray  # (M, 2) row indices into the dataset
    labels: np.ndarray  # (M,) int
    label_kind: str  # "categorical" or "binary"
    n_class: int

    def __post_init__(self):
        if len(self.pairs) != len(self.labels):
            raise ContractError("pairs and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "PairBatchSet":
        return PairBatchSet(self.pairs[idx], self.labels[idx], self.label_kind, self.n_class)


@dataclass(frozen=True)
class TripletSet:
    triples: np.ndarray  # (M, 3) anchor, positive, negative

    def __len__(self):
        return len(self.triples)

    def subset(self, idx) -> "TripletSet":
        return TripletSet(self.triples[idx])


class LabelVocabulary:
    """Canonical ``"a-b"`` strings (a <= b) for every unordered class pair."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.labels = [iim_label(a, b, n_classes) for a in range(n_classes) for b in range(a, n_classes)]
        self._ids = {s: i for i, s in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def id_of(self, label: str) -> int:
        return self._ids[label]

    def decode(self, idx: int) -> tuple[int, int]:
        a, b = self.labels[idx].split("-")
        return int(a), int(b)


def iim_label(y_i: int, y_j: int, n_classes: int | None = None) -> str:
    if y_i < 0 or y_j < 0 or (n_classes is not None and max(y_i, y_j) >= n_classes):
        raise ContractError(f"class labels ({y_i}, {y_j}) out of range")
    a, b = sorted((int(y_i), int(y_j)))
    return f"{a}-{b}"


def n_class_for(mapping_kind: str, n_classes: int) -> int:
    if n_classes < 1:
        raise ContractError("need at least one class")
    if mapping_kind == "im":
        return n_classes
    if mapping_kind == "iim":
        return n_classes + comb(n_classes, 2)
    if mapping_kind == "isim":
        return 1
    raise ContractError(f"mapping {mapping_kind!r} has no label space")


def build_class_groups(labels, n_classes: int | None = None) -> dict[int, np.ndarray]:
    """Row indices of each class, ascending.  Labels must cover [0, C) without gaps."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return {}
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"labels outside [0, {n_classes})")
    groups = {c: np.flatnonzero(labels == c) for c in range(n_classes)}
    missing = [c for c, g in groups.items() if g.size == 0]
    if missing:
        raise ContractError(f"labels are not contiguous: classes {missing} are empty")
    return groups


def _groups(dataset, min_classes: int = 1) -> dict[int, np.ndarray]:
    groups = build_class_groups(dataset.Y, dataset.n_classes)
    if len(groups) < min_classes:
        raise MappingError(f"mapping needs at least {min_classes} classes, dataset has {len(groups)}")
    for c, g in groups.items():
        if g.size < 2:
            raise MappingError(f"class {c} has {g.size} sample(s); pairing needs at least 2")
    return groups


def _same_class_partner(i: int, group: np.ndarray, rng: np.random.Generator) -> int:
    # do-while: redraw until the partner is not the sample itself
    while True:
        j = int(group[rng.integers(group.size)])
        if j != i:
            return j


def im_map(dataset, rng: np.random.Generator) -> PairBatchSet:
    groups = _groups(dataset)
    Y = dataset.Y
    pairs = np.empty((len(Y), 2), dtype=np.int64)
    for i in range(len(Y)):
        pairs[i] = i, _same_class_partner(i, groups[int(Y[i])], rng)
    return PairBatchSet(pairs, Y.astype(np.int64).copy(), "categorical", dataset.n_classes)


def iim_map(dataset, rng: np.random.Generator) -> tuple[PairBatchSet, LabelVocabulary]:
    groups = _groups(dataset)
    C = dataset.n_classes
    vocab = LabelVocabulary(C)
    Y = dataset.Y
    pairs = np.empty((len(Y) * C, 2), dtype=np.int64)
    labels = np.empty(len(Y) * C, dtype=np.int64)
    row = 0
    for i in range(len(Y)):
        yi = int(Y[i])
        for c in range(C):
            if c == yi:
                j = _same_class_partner(i, groups[c], rng)
            else:
                j = int(groups[c][rng.integers(groups[c].size)])
            pairs[row] = i, j
            labels[row] = vocab.id_of(iim_label(yi, c))
            row += 1
    return PairBatchSet(pairs, labels, "categorical", len(vocab)), vocab


def isim_map(dataset, rng: np.random.Generator) -> PairBatchSet:
    groups = _groups(dataset, min_classes=2)
    C = dataset.n_classes
    Y = dataset.Y
    pairs = np.empty((2 * len(Y), 2), dtype=np.int64)
    labels = np.tile(np.array([1, 0], dtype=np.int64), len(Y))
    for i in range(len(Y)):
        yi = int(Y[i])
        pairs[2 * i] = i, _same_class_partner(i, groups[yi], rng)
        yj = yi
        while yj == yi:
            yj = int(rng.integers(C))
        pairs[2 * i + 1] = i, int(groups[yj][rng.integers(groups[yj].size)])
    return PairBatchSet(pairs, labels, "binary", 1)


def triplet_map(dataset, rng: np.random.Generator) -> TripletSet:
    groups = _groups(dataset, min_classes=2)
    C = dataset.n_classes
    Y = dataset.Y
    triples = np.empty((len(Y), 3), dtype=np.int64)
    for i in range(len(Y)):
        yi = int(Y[i])
        group = groups[yi]
        # uniform over the class minus the anchor itself
        r = int(rng.integers(group.size - 1))
        p = int(group[r])
        if p == i:
            p = int(group[-1])
        yn = int(rng.integers(C - 1))
        if yn >= yi:
            yn += 1
        n = int(groups[yn][rng.integers(groups[yn].size)])
        triples[i] = i, p, n
    return TripletSet(triples)


def map_dataset(kind: str, dataset, rng: np.random.Generator):
    """Dispatch on a mapping name; iim drops the vocabulary (rebuild it from C)."""
    if kind == "im":
        return im_map(dataset, rng)
    if kind == "iim":
        return iim_map(dataset, rng)[0]
    if kind == "isim":
        return isim_map(dataset, rng)
    if kind == "tm":
        return triplet_map(dataset, rng)
    raise ContractError(f"unknown mapping {kind!r}; expected one of {MAPPING_KINDS}")
