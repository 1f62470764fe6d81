"""Train-and-measure harness shared by the acceptance tests and scripts/."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from covnet.data import BlobSpec, SplitSpec, generate, split, standardize
from covnet.evaluation import EmbeddingTable, class_correlation_matrix, embed_dataset, knn_accuracy
from covnet.model import VARIANTS
from covnet.training import TrainConfig, TrainHistory, train

# 4 classes in 2 superclasses {0, 1 | 2, 3}; the sibling classes overlap
# enough that their confusion is visible in the embedding
HIERARCHICAL = BlobSpec(classes=4, per_class=200, dim=20, spread=1.0, center_scale=8.0, superclasses=[0, 0, 1, 1], ratio=5.0)
BLOBS = BlobSpec(classes=4, per_class=200, dim=20, spread=1.0, center_scale=5.0)


@dataclass
class RunResult:
    variant: str
    seed: int
    knn: float
    correlation: np.ndarray
    history: TrainHistory
    seconds: float
    table: EmbeddingTable


def run(variant: str, seed: int, blobs: BlobSpec = BLOBS, k: int = 10, **train_kw) -> RunResult:
    """Generate, split 70/10/20, standardize, train, embed the test split."""
    dataset = generate(replace(blobs, seed=seed))
    tr, va, te = split(dataset, SplitSpec(0.7, 0.1, 0.2, seed=seed))
    tr, va, te, _ = standardize(tr, va, te)
    t0 = time.perf_counter()
    model, history = train(tr, va, TrainConfig(variant=variant, seed=seed, **train_kw))
    seconds = time.perf_counter() - t0
    table = embed_dataset(model, te)
    return RunResult(variant, seed, knn_accuracy(table, k), class_correlation_matrix(table, te.n_classes), history, seconds, table)


def sibling_margin(R: np.ndarray, superclasses) -> float:
    """min same-superclass correlation minus max cross-superclass correlation."""
    sup = np.asarray(superclasses)
    same = sup[:, None] == sup[None, :]
    off = ~np.eye(len(sup), dtype=bool)
    return float(np.min(R[same & off]) - np.max(R[~same]))


def variant_table(seeds=range(5), blobs: BlobSpec = HIERARCHICAL, variants=tuple(VARIANTS)) -> dict[str, list[RunResult]]:
    return {v: [run(v, s, blobs) for s in seeds] for v in variants}
