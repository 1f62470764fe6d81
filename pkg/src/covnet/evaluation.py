"""Embedding-space evaluation: k-NN accuracy, top-k search, class correlation, PCA."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from covnet import nn
from covnet.model import Model, embed
from covnet.nn import ContractError

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    ids: np.ndarray
    Z: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=np.float64)
        ids = np.asarray(self.ids, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if Z.ndim != 2 or len(ids) != len(Z) or len(labels) != len(Z):
            raise ContractError("ids, Z rows and labels must have equal length")
        if len(np.unique(ids)) != len(ids):
            raise ContractError("embedding ids must be unique")
        if len(Z) and np.max(np.abs(np.linalg.norm(Z, axis=1) - 1.0)) > UNIT_NORM_TOL:
            raise ContractError("embedding rows must have unit norm")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.ids)

    def row_of(self, sample_id: int) -> int:
        hit = np.flatnonzero(self.ids == sample_id)
        if hit.size == 0:
            raise KeyError(f"unknown sample id {sample_id}")
        return int(hit[0])


def embed_dataset(model: Model, dataset) -> EmbeddingTable:
    return EmbeddingTable(dataset.ids, embed(model.embedding, dataset.X, nn.INFER), dataset.Y)


def _cosine_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Dot products of unit rows, summed component by component in a fixed order.

    BLAS may round the same dot product differently depending on where a
    row sits in memory, which would break exact ties between duplicate rows.
    """
    S = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        S += A[:, k, None] * B[None, :, k]
    return S


def _ranked_neighbours(S: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -similarity keeps equal scores in ascending index order
    return np.argsort(-S, axis=1, kind="stable")[:, :k]


def knn_accuracy(table: EmbeddingTable, k: int) -> float:
    """Fraction of label-matching neighbours among every sample's k nearest (cosine, self excluded)."""
    n = len(table)
    if not 1 <= k <= n - 1:
        raise ContractError(f"k must lie in [1, {n - 1}], got {k}")
    S = _cosine_matrix(table.Z, table.Z)
    np.fill_diagonal(S, -np.inf)
    nbrs = _ranked_neighbours(S, k)
    hits = table.labels[nbrs] == table.labels[:, None]
    return float(hits.sum() / (n * k))


@dataclass(frozen=True)
class SearchHit:
    id: int
    similarity: float
    relevant: bool | None


def topk_search(table: EmbeddingTable, query, k: int, query_label: int | None = None) -> list[SearchHit]:
    """Top-k stored samples by cosine similarity to ``query``.

    ``query`` is either a stored sample id (int; the sample itself is
    skipped and its label defines relevance) or an external vector of
    length q (relevance uses ``query_label`` when given).
    """
    n = len(table)
    if isinstance(query, (int, np.integer)):
        row = table.row_of(int(query))
        if not 1 <= k <= n - 1:
            raise ContractError(f"k must lie in [1, {n - 1}] for a stored query, got {k}")
        S = _cosine_matrix(table.Z[row : row + 1], table.Z)[0]
        S[row] = -np.inf
        query_label = int(table.labels[row])
    else:
        vec = np.asarray(query, dtype=np.float64).reshape(1, -1)
        if vec.shape[1] != table.Z.shape[1]:
            raise ContractError(f"query has {vec.shape[1]} components, table has {table.Z.shape[1]}")
        if not 1 <= k <= n:
            raise ContractError(f"k must lie in [1, {n}], got {k}")
        S = _cosine_matrix(vec / max(np.linalg.norm(vec), nn.L2_EPS), table.Z)[0]
    order = np.argsort(-S, kind="stable")[:k]
    return [
        SearchHit(
            int(table.ids[j]),
            float(S[j]),
            None if query_label is None else bool(table.labels[j] == query_label),
        )
        for j in order
    ]


def pearson(a, b) -> float:
    """Pearson correlation of two vectors; NaN when either has zero variance."""
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.sum(a * b) / denom, -1.0, 1.0))


def class_centroids(table: EmbeddingTable, n_classes: int | None = None) -> np.ndarray:
    n_classes = int(table.labels.max()) + 1 if n_classes is None else n_classes
    cents = []
    for c in range(n_classes):
        rows = table.Z[table.labels == c]
        if len(rows) == 0:
            raise ContractError(f"class {c} has no samples")
        cents.append(rows.mean(axis=0))
    return np.array(cents)


def class_correlation_matrix(table: EmbeddingTable, n_classes: int | None = None, mode: str = "centroid") -> np.ndarray:
    """C x C Pearson correlations between classes, unit diagonal.

    ``centroid``: correlation between per-class mean embeddings.
    ``sample``: mean correlation over all cross-class sample pairs (same-class
    entries average over distinct pairs).  Undefined entries are NaN.
    """
    if table.Z.shape[1] < 2:
        raise ContractError("correlation over components needs q >= 2")
    cents = class_centroids(table, n_classes)
    C = len(cents)
    R = np.eye(C)
    if mode == "centroid":
        for a in range(C):
            for b in range(a + 1, C):
                R[a, b] = R[b, a] = pearson(cents[a], cents[b])
        return R
    if mode != "sample":
        raise ContractError(f"unknown correlation mode {mode!r}")
    Zc = table.Z - table.Z.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(Zc, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        Zn = Zc / norms[:, None]
    Zn[norms == 0] = np.nan
    P = Zn @ Zn.T
    for a in range(C):
        ra = np.flatnonzero(table.labels == a)
        for b in range(a + 1, C):
            rb = np.flatnonzero(table.labels == b)
            R[a, b] = R[b, a] = float(np.mean(P[np.ix_(ra, rb)]))
    return R


def pca_project(table: EmbeddingTable, dims: int = 2) -> np.ndarray:
    """Coordinates on the top principal directions of the embedding covariance.

    Each direction's largest-magnitude loading is made positive so the
    output is deterministic.
    """
    n = len(table)
    if n < 3:
        raise ContractError(f"projection needs at least 3 samples, got {n}")
    Zc = table.Z - table.Z.mean(axis=0)
    cov = Zc.T @ Zc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:dims]
    W = vecs[:, order]
    lead = np.argmax(np.abs(W), axis=0)
    W = W * np.sign(W[lead, np.arange(W.shape[1])])
    P = Zc @ W
    P -= P.mean(axis=0)
    return P


# ---------------------------------------------------------------- exports


def write_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"z{k}" for k in range(table.Z.shape[1])])
        for i, y, z in zip(table.ids, table.labels, table.Z):
            w.writerow([int(i), int(y)] + [repr(float(v)) for v in z])


def read_embeddings(path) -> EmbeddingTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:2] != ["id", "label"]:
        raise ContractError(f"{path}: header must start with id,label")
    return EmbeddingTable(
        [int(r[0]) for r in rows], np.array([[float(v) for v in r[2:]] for r in rows]), [int(r[1]) for r in rows]
    )


def write_projection(table: EmbeddingTable, coords: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "u", "v"])
        for i, y, (u, v) in zip(table.ids, table.labels, coords):
            w.writerow([int(i), int(y), repr(float(u)), repr(float(v))])


def dataset_hash(dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.X).tobytes())
    h.update(np.ascontiguousarray(dataset.Y).tobytes())
    h.update(np.ascontiguousarray(dataset.ids).tobytes())
    return h.hexdigest()


def eval_report(table: EmbeddingTable, ks, n_classes: int, metadata: dict, corr_mode: str = "centroid") -> dict:
    R = class_correlation_matrix(table, n_classes, corr_mode)
    return {
        "k": [int(k) for k in ks],
        "accuracy": [knn_accuracy(table, int(k)) for k in ks],
        "correlation_mode": corr_mode,
        "correlation": [[None if np.isnan(v) else float(v) for v in row] for row in R],
        "n_classes": n_classes,
        "metadata": metadata,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=1, allow_nan=False) + "\n")
