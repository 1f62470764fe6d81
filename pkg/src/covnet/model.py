"""Shared-weight embedding network, merge layers, tail heads and the six variants.

A pair (x, x') goes through the *same* embedding network F, the two outputs
are merged (covariance vector or Euclidean distance) and a small tail G
classifies the merged representation.  Triplet and N-pair variants skip the
tail and optimise a metric loss on the embeddings directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from covnet import nn
from covnet.mapping import PairBatchSet, TripletSet, n_class_for
from covnet.nn import ContractError, LayerSpec, LayerState

DIST_EPS = 1e-12


@dataclass(frozen=True)
class Variant:
    name: str
    mapping: str  # im | iim | isim | tm
    merge: str | None  # covariance | euclidean | None
    tail: str | None  # softmax | sigmoid | None
    loss: str  # ce | be | siamese | triplet | npair


VARIANTS = {
    "covnet-v1": Variant("CovNetV1", "im", "covariance", "softmax", "ce"),
    "covnet-v2": Variant("CovNetV2", "iim", "covariance", "softmax", "ce"),
    "covnet-v3": Variant("CovNetV3", "isim", "covariance", "sigmoid", "be"),
    "siamese": Variant("Siamese", "isim", "euclidean", "sigmoid", "siamese"),
    "triplet": Variant("Triplet", "tm", None, None, "triplet"),
    "npair": Variant("NPair", "im", None, None, "npair"),
}

_ALIASES = {v.name.lower(): k for k, v in VARIANTS.items()}


def resolve_variant(name: str) -> str:
    """Canonical CLI key for a variant name such as ``covnet-v2`` or ``CovNetV2``."""
    key = name.strip().lower()
    if key in VARIANTS:
        return key
    if key in _ALIASES:
        return _ALIASES[key]
    raise ContractError(f"unknown variant {name!r}; valid names: {', '.join(VARIANTS)}")


# ---------------------------------------------------------------- embedding network


def embedding_specs(
    in_dim: int, hidden=(32,), q: int = 16, dropout: float = 0.0, batchnorm: bool = False
) -> list[LayerSpec]:
    """Dense-ReLU[-BN][-Dropout] blocks followed by Dense(q)-Tanh-L2Norm."""
    specs, width = [], in_dim
    for h in hidden:
        specs += [nn.Dense(width, h), nn.ReLU()]
        if batchnorm:
            specs.append(nn.BatchNorm(h))
        if dropout > 0:
            specs.append(nn.Dropout(dropout))
        width = h
    return specs + [nn.Dense(width, q), nn.Tanh(), nn.L2Norm()]


def embed(states: list[LayerState], X, mode: str = nn.INFER, rng=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    first = states[0].spec
    if first.kind == "dense" and X.shape[1] != first.in_dim:
        raise ContractError(f"embedding expects {first.in_dim} features, got {X.shape[1]}")
    return nn.network_forward(states, X, mode, rng)[0]


# ---------------------------------------------------------------- merges and similarities


def covariance_vector(Z, Z2) -> np.ndarray:
    """Row-wise (z - mean z) * (z' - mean z'), means taken over the q components."""
    Z, Z2 = _pair_shapes(Z, Z2)
    return (Z - Z.mean(axis=1, keepdims=True)) * (Z2 - Z2.mean(axis=1, keepdims=True))


def covariance_vector_backward(Z, Z2, dV):
    A = Z - Z.mean(axis=1, keepdims=True)
    B = Z2 - Z2.mean(axis=1, keepdims=True)
    dA, dB = dV * B, dV * A
    return dA - dA.mean(axis=1, keepdims=True), dB - dB.mean(axis=1, keepdims=True)


def covariance_scalar(z, z2) -> float:
    """Sample covariance of two equal-length vectors (divisor s - 1)."""
    z = np.asarray(z, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    if z.shape != z2.shape:
        raise ContractError(f"length mismatch {z.size} vs {z2.size}")
    if z.size < 2:
        raise ContractError("covariance needs at least 2 components")
    return float(np.sum((z - z.mean()) * (z2 - z2.mean())) / (z.size - 1))


def euclidean_distance(Z, Z2) -> np.ndarray:
    Z, Z2 = _pair_shapes(Z, Z2)
    return np.linalg.norm(Z - Z2, axis=1, keepdims=True)


def euclidean_distance_backward(Z, Z2, d, dd):
    # the distance is not differentiable at d == 0; use the zero subgradient there
    g = dd * (Z - Z2) / np.maximum(d, DIST_EPS)
    return g, -g


def cosine_similarity(z, z2) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    if z.shape != z2.shape:
        raise ContractError(f"length mismatch {z.size} vs {z2.size}")
    denom = max(np.linalg.norm(z), nn.L2_EPS) * max(np.linalg.norm(z2), nn.L2_EPS)
    return float(np.clip(z @ z2 / denom, -1.0, 1.0))


def _pair_shapes(Z, Z2):
    Z = np.asarray(Z, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z.shape != Z2.shape or Z.ndim != 2:
        raise ContractError(f"merge needs two equal 2-D shapes, got {Z.shape} and {Z2.shape}")
    return Z, Z2


def _normalize_rows(A):
    norm = np.maximum(np.linalg.norm(A, axis=1, keepdims=True), nn.L2_EPS)
    return A / norm, norm


def _normalize_rows_backward(An, norm, dAn):
    return (dAn - An * np.sum(dAn * An, axis=1, keepdims=True)) / norm


# ---------------------------------------------------------------- metric losses


def triplet_loss(Za, Zp, Zn, margin: float = 0.2):
    """Mean of max(0, |a - p|^2 - |a - n|^2 + margin); returns (loss, (dZa, dZp, dZn))."""
    Za, Zp = _pair_shapes(Za, Zp)
    Za, Zn = _pair_shapes(Za, Zn)
    if margin <= 0:
        raise ContractError("triplet margin must be positive")
    n = Za.shape[0]
    d_ap = np.sum((Za - Zp) ** 2, axis=1)
    d_an = np.sum((Za - Zn) ** 2, axis=1)
    hinge = d_ap - d_an + margin
    active = (hinge > 0)[:, None] / n
    loss = float(np.sum(np.maximum(hinge, 0.0)) / n)
    return loss, (active * 2 * (Zn - Zp), active * -2 * (Za - Zp), active * 2 * (Za - Zn))


def npair_loss(Za, Zp, labels=None):
    """Multi-class N-pair loss with cosine logits.

    L_i = log(1 + sum_{j != i} exp(cos(a_i, p_j) - cos(a_i, p_i))), batch mean.
    When ``labels`` is given, positives of the anchor's own class are left out
    of its negative set.  Returns (loss, (dZa, dZp)).
    """
    Za, Zp = _pair_shapes(Za, Zp)
    n = Za.shape[0]
    if n < 2:
        raise ContractError("N-pair loss needs a batch of at least 2 pairs")
    An, a_norm = _normalize_rows(Za)
    Pn, p_norm = _normalize_rows(Zp)
    S = An @ Pn.T
    D = S - np.diag(S)[:, None]
    neg = ~np.eye(n, dtype=bool)
    if labels is not None:
        labels = np.asarray(labels)
        neg &= labels[:, None] != labels[None, :]
    Dm = np.where(neg, D, -np.inf)
    top = np.maximum(Dm.max(axis=1), 0.0)
    E = np.where(neg, np.exp(Dm - top[:, None]), 0.0)
    denom = np.exp(-top) + E.sum(axis=1)
    loss = float(np.mean(top + np.log(denom)))

    W = E / denom[:, None] / n  # dL/dS_ij for negatives
    dS = W - np.diag(W.sum(axis=1))
    dAn = dS @ Pn
    dPn = dS.T @ An
    return loss, (_normalize_rows_backward(An, a_norm, dAn), _normalize_rows_backward(Pn, p_norm, dPn))


def contrastive_loss(d, y, margin: float = 1.0):
    """Mean of y d^2 + (1 - y) max(0, margin - d)^2; returns (loss, dd)."""
    d = np.asarray(d, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("contrastive targets must be 0 or 1")
    n = d.shape[0]
    gap = np.maximum(margin - d, 0.0)
    loss = float(np.sum(y * d**2 + (1 - y) * gap**2) / n)
    return loss, (2 * y * d - 2 * (1 - y) * gap) / n


# ---------------------------------------------------------------- tails


def tail_specs(kind: str | None, width: int, n_class: int) -> list[LayerSpec]:
    if kind is None:
        return []
    if kind == "softmax":
        return [nn.Dense(width, n_class)]
    if kind == "sigmoid":
        return [nn.BatchNorm(width), nn.Dense(width, 1)]
    raise ContractError(f"unknown tail {kind!r}")


def tail_predict(states: list[LayerState], V, mode: str = nn.INFER, rng=None) -> np.ndarray:
    """Logits of the tail head (softmax / sigmoid is applied by the loss)."""
    V = np.asarray(V, dtype=np.float64)
    width = states[0].spec.in_dim
    if V.ndim != 2 or V.shape[1] != width:
        raise ContractError(f"tail expects width {width}, got shape {V.shape}")
    return nn.network_forward(states, V, mode, rng)[0]


# ---------------------------------------------------------------- the model


@dataclass
class Model:
    variant: str
    n_classes: int
    embedding: list[LayerState]
    tail: list[LayerState] = field(default_factory=list)
    margin: float | None = None
    siamese_mode: str = "bce"  # "bce" (sigmoid tail) or "contrastive"

    @property
    def spec(self) -> Variant:
        return VARIANTS[self.variant]

    @property
    def q(self) -> int:
        return self.embedding[-3].spec.out_dim

    @property
    def layers(self) -> list[LayerState]:
        return self.embedding + self.tail

    def parameters(self) -> list[dict[str, np.ndarray]]:
        """Omega: every trainable array of F then G, as one list of dicts."""
        return [s.params for s in self.layers]

    def effective_margin(self) -> float:
        if self.margin is not None:
            return self.margin
        return 0.2 if self.spec.loss == "triplet" else 1.0


def build_model(
    variant: str,
    in_dim: int,
    n_classes: int,
    rng: np.random.Generator,
    hidden=(32,),
    q: int = 16,
    dropout: float = 0.0,
    batchnorm: bool = False,
    margin: float | None = None,
    siamese_mode: str = "bce",
) -> Model:
    key = resolve_variant(variant)
    v = VARIANTS[key]
    if siamese_mode not in ("bce", "contrastive"):
        raise ContractError(f"siamese_mode must be 'bce' or 'contrastive', got {siamese_mode!r}")
    emb = [nn.init_layer(s, rng) for s in embedding_specs(in_dim, hidden, q, dropout, batchnorm)]
    tail_kind = v.tail
    if key == "siamese" and siamese_mode == "contrastive":
        tail_kind = None
    width = 1 if v.merge == "euclidean" else q
    n_out = n_class_for(v.mapping, n_classes) if tail_kind == "softmax" else 1
    tail = [nn.init_layer(s, rng) for s in tail_specs(tail_kind, width, n_out)]
    if v.merge == "euclidean" and tail:
        # a larger distance must lower the match logit; a positive start
        # lets the embedding learn the inverted geometry and collapse
        W = tail[-1].params["W"]
        W[...] = -np.abs(W)
    return Model(key, n_classes, emb, tail, margin, siamese_mode)


def _embed_stack(model: Model, X: np.ndarray, mode, rng):
    Z, caches = nn.network_forward(model.embedding, X, mode, rng)
    return Z, caches


def forward_loss(model: Model, X, batch, mode: str = nn.TRAIN, rng=None, grads: bool = True, input_grad: bool = False):
    """Loss of one mini-batch and, when ``grads``, the gradient for every array of Omega.

    ``batch`` is a ``PairBatchSet`` (pairs index rows of ``X``) or a
    ``TripletSet``.  Both branches run through a single stacked forward pass
    of the shared network, so the gradient of F is the sum over branches.
    With ``input_grad`` a third value, the gradient w.r.t. ``X``, is returned.
    """
    X = np.asarray(X, dtype=np.float64)
    v = model.spec
    if v.mapping == "tm":
        if not isinstance(batch, TripletSet):
            raise ContractError(f"{v.name} needs a triplet set")
        idx = batch.triples
    else:
        if not isinstance(batch, PairBatchSet):
            raise ContractError(f"{v.name} needs a pair set")
        expect = "binary" if v.mapping == "isim" else "categorical"
        if batch.label_kind != expect:
            raise ContractError(f"{v.name} needs {expect} pair labels, got {batch.label_kind}")
        idx = batch.pairs
    n, k = idx.shape
    Z, emb_caches = _embed_stack(model, X[idx.T.ravel()], mode, rng)
    parts = [Z[b * n : (b + 1) * n] for b in range(k)]

    tail_caches = None
    dparts = None
    if v.loss == "triplet":
        loss, dparts = triplet_loss(*parts, margin=model.effective_margin())
    elif v.loss == "npair":
        loss, dparts = npair_loss(parts[0], parts[1], batch.labels)
    else:
        if v.merge == "covariance":
            merged = covariance_vector(parts[0], parts[1])
        else:
            merged = euclidean_distance(parts[0], parts[1])
        if model.tail:
            out, tail_caches = nn.network_forward(model.tail, merged, mode, rng)
            if v.loss == "ce":
                loss, dout = nn.ce_loss(out, nn.one_hot(batch.labels, out.shape[1]))
            else:
                loss, dout = nn.be_loss(out, batch.labels)
        else:
            out = merged
            loss, dout = contrastive_loss(merged, batch.labels, model.effective_margin())
        if grads:
            tail_grads = []
            dmerged = dout
            if model.tail:
                dmerged, tail_grads = nn.network_backward(model.tail, tail_caches, dout)
            if v.merge == "covariance":
                dparts = covariance_vector_backward(parts[0], parts[1], dmerged)
            else:
                dparts = euclidean_distance_backward(parts[0], parts[1], merged, dmerged)

    if not np.isfinite(loss):
        raise nn.NumericError(f"non-finite loss {loss}")
    if not grads:
        return loss, None
    if v.loss in ("triplet", "npair"):
        tail_grads = []
    dstack, emb_grads = nn.network_backward(model.embedding, emb_caches, np.vstack(dparts))
    if not input_grad:
        return loss, emb_grads + tail_grads
    dX = np.zeros_like(X)
    np.add.at(dX, idx.T.ravel(), dstack)
    return loss, emb_grads + tail_grads, dX
