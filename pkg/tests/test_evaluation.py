import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covnet.evaluation import (
    EmbeddingTable,
    class_centroids,
    class_correlation_matrix,
    eval_report,
    knn_accuracy,
    pca_project,
    pearson,
    read_embeddings,
    topk_search,
    write_embeddings,
    write_projection,
)
from covnet.nn import ContractError


def random_table(rng, n, q=4, C=3, ties=False):
    Z = rng.standard_normal((n, q))
    if ties:
        # duplicate rows force exact similarity ties
        Z[rng.integers(0, n, n // 3)] = Z[0]
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return EmbeddingTable(np.arange(n) * 3 + 1, Z, rng.integers(0, C, n))


def brute_neighbours(Z, i, k, exclude_self=True):
    # O(N) per query: score every row, then pick best-first with index tie-break
    scored = []
    for j in range(len(Z)):
        if exclude_self and j == i:
            continue
        s = 0.0
        for a, b in zip(Z[i], Z[j]):
            s += float(a) * float(b)
        scored.append((-s, j))
    scored.sort()
    return [j for _, j in scored[:k]]


def brute_knn(table, k):
    Z, y = table.Z, table.labels
    hits = 0
    for i in range(len(Z)):
        hits += sum(y[j] == y[i] for j in brute_neighbours(Z, i, k))
    return hits / (len(Z) * k)


# ---------------------------------------------------------------- table


def test_table_contracts():
    with pytest.raises(ContractError):
        EmbeddingTable([0, 0], [[1.0, 0.0], [0.0, 1.0]], [0, 1])
    with pytest.raises(ContractError):
        EmbeddingTable([0, 1], [[2.0, 0.0], [0.0, 1.0]], [0, 1])
    with pytest.raises(ContractError):
        EmbeddingTable([0], [[1.0, 0.0], [0.0, 1.0]], [0, 1])
    t = EmbeddingTable([7, 3], [[1.0, 0.0], [0.0, 1.0]], [0, 1])
    assert t.row_of(3) == 1
    with pytest.raises(KeyError):
        t.row_of(4)


# ---------------------------------------------------------------- knn


def test_knn_collapsed_classes():
    Z = np.array([[1.0, 0.0]] * 4 + [[0.0, 1.0]] * 4)
    t = EmbeddingTable(np.arange(8), Z, [0] * 4 + [1] * 4)
    assert knn_accuracy(t, 1) == 1.0
    assert knn_accuracy(t, 3) == 1.0


def test_knn_single_class(rng):
    t = random_table(rng, 20, C=1)
    assert all(knn_accuracy(t, k) == 1.0 for k in (1, 5, 19))


def test_knn_random_labels_near_chance(rng):
    t = random_table(rng, 400, q=8, C=4)
    assert abs(knn_accuracy(t, 10) - 0.25) < 0.05


def test_knn_k_range(rng):
    t = random_table(rng, 10)
    for k in (0, 10, -1):
        with pytest.raises(ContractError):
            knn_accuracy(t, k)


def test_knn_tie_break_by_index():
    # rows 1 and 2 are equally similar to row 0; lower index wins
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [-1.0, 0.0]])
    t = EmbeddingTable(np.arange(4), Z, [0, 0, 1, 1])
    assert topk_search(t, 0, 1)[0].id == 1
    assert knn_accuracy(t, 1) == pytest.approx((1 + 0 + 0 + 0) / 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.booleans())
def test_knn_matches_brute_force(seed, n, ties):
    rng = np.random.default_rng(seed)
    t = random_table(rng, n, ties=ties)
    k = int(rng.integers(1, n))
    assert knn_accuracy(t, k) == brute_knn(t, k)


# ---------------------------------------------------------------- search


def test_search_internal_query(rng):
    t = random_table(rng, 30)
    hits = topk_search(t, int(t.ids[4]), 10)
    assert len(hits) == 10
    sims = [h.similarity for h in hits]
    assert sims == sorted(sims, reverse=True)
    assert int(t.ids[4]) not in [h.id for h in hits]
    for h in hits:
        assert h.relevant == (t.labels[t.row_of(h.id)] == t.labels[4])


def test_search_external_vector(rng):
    t = random_table(rng, 30)
    hits = topk_search(t, t.Z[4], 3)
    assert hits[0].id == t.ids[4] and hits[0].similarity == pytest.approx(1.0)
    assert all(h.relevant is None for h in hits)
    assert topk_search(t, t.Z[4], 3, query_label=int(t.labels[4]))[0].relevant is True
    assert len(topk_search(t, t.Z[0], 30)) == 30


def test_search_errors(rng):
    t = random_table(rng, 5)
    with pytest.raises(KeyError):
        topk_search(t, 999, 2)
    with pytest.raises(ContractError):
        topk_search(t, int(t.ids[0]), 5)
    with pytest.raises(ContractError):
        topk_search(t, int(t.ids[0]), 0)
    with pytest.raises(ContractError):
        topk_search(t, np.ones(3), 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.booleans())
def test_search_matches_brute_force(seed, n, ties):
    rng = np.random.default_rng(seed)
    t = random_table(rng, n, ties=ties)
    i = int(rng.integers(0, n))
    k = int(rng.integers(1, n))
    got = [h.id for h in topk_search(t, int(t.ids[i]), k)]
    assert got == [int(t.ids[j]) for j in brute_neighbours(t.Z, i, k)]


def test_oracles_agree_on_a_large_table():
    rng = np.random.default_rng(77)
    t = random_table(rng, 500, q=6, C=5, ties=True)
    assert knn_accuracy(t, 7) == brute_knn(t, 7)
    for i in (0, 250, 499):
        assert [h.id for h in topk_search(t, int(t.ids[i]), 12)] == [int(t.ids[j]) for j in brute_neighbours(t.Z, i, 12)]


# ---------------------------------------------------------------- correlation


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert math.isnan(pearson([1, 1, 1], [1, 2, 3]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pearson_matches_numpy(seed):
    a, b = np.random.default_rng(seed).standard_normal((2, 7))
    assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)


def test_correlation_matrix_matches_corrcoef(rng):
    t = random_table(rng, 80, q=6, C=4)
    R = class_correlation_matrix(t, 4)
    np.testing.assert_allclose(R, np.corrcoef(class_centroids(t, 4)), atol=1e-12)
    np.testing.assert_array_equal(R, R.T)
    np.testing.assert_array_equal(np.diag(R), 1.0)


def test_sample_mode(rng):
    t = random_table(rng, 40, q=5, C=3)
    R = class_correlation_matrix(t, 3, mode="sample")
    np.testing.assert_array_equal(R, R.T)
    a, b = np.flatnonzero(t.labels == 0), np.flatnonzero(t.labels == 1)
    expect = np.mean([np.corrcoef(t.Z[i], t.Z[j])[0, 1] for i in a for j in b])
    assert R[0, 1] == pytest.approx(expect, abs=1e-12)
    with pytest.raises(ContractError):
        class_correlation_matrix(t, 3, mode="median")


def test_correlation_missing_class(rng):
    t = random_table(rng, 10, C=2)
    with pytest.raises(ContractError, match="class 2"):
        class_correlation_matrix(t, 3)


# ---------------------------------------------------------------- projection


def test_pca_properties(rng):
    t = random_table(rng, 50, q=6)
    P = pca_project(t)
    assert P.shape == (50, 2)
    assert np.all(np.abs(P.mean(axis=0)) < 1e-10)
    var = P.var(axis=0)
    assert var[0] >= var[1]
    Zc = t.Z - t.Z.mean(axis=0)
    top = np.linalg.svd(Zc, compute_uv=False)[:2] ** 2 / 49
    np.testing.assert_allclose(P.var(axis=0, ddof=1), top, rtol=1e-9)
    np.testing.assert_array_equal(P, pca_project(t))


def test_pca_sign_convention(rng):
    t = random_table(rng, 20, q=3)
    flipped = EmbeddingTable(t.ids, -t.Z, t.labels)
    # negating the data negates the scores but not the canonical axes
    np.testing.assert_allclose(pca_project(flipped), -pca_project(t), atol=1e-12)


def test_pca_needs_three():
    with pytest.raises(ContractError):
        pca_project(EmbeddingTable([0, 1], [[1.0, 0.0], [0.0, 1.0]], [0, 1]))


# ---------------------------------------------------------------- exports


def test_embedding_csv_roundtrip(rng, tmp_path):
    t = random_table(rng, 12, q=5)
    write_embeddings(t, tmp_path / "e.csv")
    back = read_embeddings(tmp_path / "e.csv")
    assert back.Z.tobytes() == t.Z.tobytes()
    np.testing.assert_array_equal(back.ids, t.ids)
    np.testing.assert_array_equal(back.labels, t.labels)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "id,label,z0,z1,z2,z3,z4"


def test_projection_csv(rng, tmp_path):
    t = random_table(rng, 12)
    write_projection(t, pca_project(t), tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "id,label,u,v" and len(lines) == 13


def test_report(rng):
    t = random_table(rng, 30, C=3)
    rep = eval_report(t, [1, 5], 3, {"variant": "x"})
    assert rep["accuracy"] == [knn_accuracy(t, 1), knn_accuracy(t, 5)]
    R = np.array(rep["correlation"])
    assert R.shape == (3, 3) and np.array_equal(R, R.T)
    assert all(0 <= a <= 1 for a in rep["accuracy"])
