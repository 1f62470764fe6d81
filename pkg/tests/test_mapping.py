from itertools import product
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covnet.data import LabeledDataset
from covnet.mapping import (
    LabelVocabulary,
    MappingError,
    build_class_groups,
    iim_label,
    iim_map,
    im_map,
    isim_map,
    n_class_for,
    triplet_map,
)
from covnet.nn import ContractError


def dataset(labels, n_classes=None):
    labels = np.asarray(labels)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    return LabeledDataset(np.zeros((len(labels), 2)), labels, C)


def rng(seed=0):
    return np.random.default_rng(seed)


# class sizes >= 2, C in [1, 6]
class_sizes = st.lists(st.integers(2, 6), min_size=1, max_size=6)
multi_class_sizes = st.lists(st.integers(2, 6), min_size=2, max_size=6)


def from_sizes(sizes, seed):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return dataset(np.random.default_rng(seed).permutation(labels), len(sizes))


def test_class_groups_examples():
    cg = build_class_groups([0, 1, 0, 1])
    assert {k: v.tolist() for k, v in cg.items()} == {0: [0, 2], 1: [1, 3]}
    assert {k: v.tolist() for k, v in build_class_groups([0, 0, 0]).items()} == {0: [0, 1, 2]}
    assert build_class_groups([]) == {}


def test_class_groups_reject_gaps():
    with pytest.raises(ContractError):
        build_class_groups([0, 2, 2])


@given(class_sizes, st.integers(0, 1000))
def test_class_groups_partition(sizes, seed):
    ds = from_sizes(sizes, seed)
    cg = build_class_groups(ds.Y, ds.n_classes)
    every = np.sort(np.concatenate(list(cg.values())))
    np.testing.assert_array_equal(every, np.arange(len(ds)))
    for c, rows in cg.items():
        assert np.all(ds.Y[rows] == c)


# ---------------------------------------------------------------- IM


def test_im_forced_partner():
    pairs = im_map(dataset([0, 0]), rng())
    assert pairs.pairs.tolist() == [[0, 1], [1, 0]]
    assert pairs.labels.tolist() == [0, 0]


@settings(max_examples=50, deadline=None)
@given(class_sizes, st.integers(0, 1000))
def test_im_scan(sizes, seed):
    ds = from_sizes(sizes, seed)
    out = im_map(ds, rng(seed))
    assert len(out) == len(ds) and out.label_kind == "categorical" and out.n_class == ds.n_classes
    for row, ((i, j), y) in enumerate(zip(out.pairs, out.labels)):
        assert i == row and i != j and ds.Y[i] == ds.Y[j] == y


def test_im_singleton_class_fails_naming_class():
    with pytest.raises(MappingError, match="class 1"):
        im_map(dataset([0, 0, 1]), rng())


def test_im_partner_uniformity():
    ds = dataset([0, 0, 0, 1, 1])
    r = rng(5)
    n = 10_000
    # sample 0 of a 3-element class draws from {1, 2}
    counts = np.bincount([im_map(ds, r).pairs[0, 1] for _ in range(n)], minlength=3)
    # two eligible partners, each p = 1/2
    sd = np.sqrt(n * 0.25)
    assert counts[0] == 0
    assert abs(counts[1] - n / 2) < 5 * sd and abs(counts[2] - n / 2) < 5 * sd


def test_im_uniform_over_three_partners():
    # sample 0 of a 4-element class has 3 eligible partners
    ds = dataset([0, 0, 0, 0, 1, 1])
    r = rng(9)
    n = 10_000
    counts = np.bincount([im_map(ds, r).pairs[0, 1] for _ in range(n)], minlength=4)
    sd = np.sqrt(n * (1 / 3) * (2 / 3))
    assert counts[0] == 0
    assert np.all(np.abs(counts[1:] - n / 3) < 5 * sd)


# ---------------------------------------------------------------- IIM


def test_iim_label_examples():
    assert iim_label(3, 1) == "1-3"
    assert iim_label(2, 2) == "2-2"
    for a, b in product(range(6), repeat=2):
        assert iim_label(a, b) == iim_label(b, a)
    with pytest.raises(ContractError):
        iim_label(4, 1, n_classes=4)


@pytest.mark.parametrize("C,size", [(10, 55), (4, 10), (1, 1)])
def test_vocabulary_size(C, size):
    assert len(LabelVocabulary(C)) == size == n_class_for("iim", C)


def test_vocabulary_covers_every_pair_once():
    v = LabelVocabulary(12)
    assert len(set(v.labels)) == len(v) == 12 + comb(12, 2)
    assert [v.decode(i) for i in range(len(v))] == sorted((a, b) for a in range(12) for b in range(a, 12))
    # "1-11" and "11-1" style ambiguity is impossible with the separator
    assert v.id_of("1-11") != v.id_of("11-11")


def test_n_class_for():
    assert n_class_for("im", 10) == 10
    assert n_class_for("iim", 10) == 55
    assert n_class_for("isim", 10) == 1


@pytest.mark.parametrize("labels,C", [([0, 0, 1, 1, 1], 2), ([0, 1, 2, 3, 0, 1, 2, 3], 4), ([0, 0, 1, 1, 2, 2, 3, 3, 0, 1], 4)])
def test_iim_count_is_n_times_c(labels, C):
    out, _ = iim_map(LabeledDataset(np.zeros((len(labels), 1)), labels, C), rng())
    assert len(out) == len(labels) * C


@settings(max_examples=40, deadline=None)
@given(class_sizes, st.integers(0, 1000))
def test_iim_scan(sizes, seed):
    ds = from_sizes(sizes, seed)
    out, vocab = iim_map(ds, rng(seed))
    C = ds.n_classes
    assert len(out) == len(ds) * C
    assert out.n_class == len(vocab) == C + C * (C - 1) // 2
    for row, ((i, j), lab) in enumerate(zip(out.pairs, out.labels)):
        assert i == row // C
        assert ds.Y[j] == row % C
        assert i != j
        assert set(vocab.decode(lab)) == {ds.Y[i], ds.Y[j]}


# ---------------------------------------------------------------- ISIM


def test_isim_one_match_one_mismatch_per_sample():
    ds = dataset([0, 0, 1, 1, 0])
    out = isim_map(ds, rng())
    assert len(out) == 10
    assert out.labels.tolist() == [1, 0] * 5


@settings(max_examples=50, deadline=None)
@given(multi_class_sizes, st.integers(0, 1000))
def test_isim_scan(sizes, seed):
    ds = from_sizes(sizes, seed)
    out = isim_map(ds, rng(seed))
    assert len(out) == 2 * len(ds) and out.label_kind == "binary"
    assert np.sum(out.labels == 1) == np.sum(out.labels == 0) == len(ds)
    for (i, j), y in zip(out.pairs, out.labels):
        if y == 1:
            assert ds.Y[i] == ds.Y[j] and i != j
        else:
            assert ds.Y[i] != ds.Y[j]


def test_isim_needs_two_classes():
    with pytest.raises(MappingError):
        isim_map(dataset([0, 0, 0]), rng())
    with pytest.raises(MappingError):
        isim_map(dataset([0, 0, 1]), rng())


# ---------------------------------------------------------------- triplets


def test_triplet_forced_structure():
    ds = dataset([0, 0, 1, 1])
    out = triplet_map(ds, rng())
    assert len(out) == 4
    assert out.triples.tolist() == [[0, 1, out.triples[0, 2]], [1, 0, out.triples[1, 2]], [2, 3, out.triples[2, 2]], [3, 2, out.triples[3, 2]]]
    assert all(ds.Y[a] != ds.Y[n] for a, _, n in out.triples)


@settings(max_examples=50, deadline=None)
@given(multi_class_sizes, st.integers(0, 1000))
def test_triplet_scan(sizes, seed):
    ds = from_sizes(sizes, seed)
    out = triplet_map(ds, rng(seed))
    assert len(out) == len(ds)
    for a, p, n in out.triples:
        assert ds.Y[a] == ds.Y[p] and a != p and ds.Y[a] != ds.Y[n]


def test_triplet_positive_uniform():
    ds = dataset([0, 0, 0, 0, 1, 1])
    r = rng(3)
    n = 9000
    counts = np.bincount([triplet_map(ds, r).triples[2, 1] for _ in range(n)], minlength=4)
    sd = np.sqrt(n * (1 / 3) * (2 / 3))
    assert counts[2] == 0
    assert np.all(np.abs(counts[[0, 1, 3]] - n / 3) < 5 * sd)


# ---------------------------------------------------------------- determinism


@pytest.mark.parametrize("mapper", [im_map, isim_map, triplet_map, lambda d, r: iim_map(d, r)[0]])
def test_same_seed_same_output(mapper):
    ds = from_sizes([3, 4, 2], 0)
    a, b = mapper(ds, rng(11)), mapper(ds, rng(11))
    fa = a.triples if hasattr(a, "triples") else a.pairs
    fb = b.triples if hasattr(b, "triples") else b.pairs
    np.testing.assert_array_equal(fa, fb)
