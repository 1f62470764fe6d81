"""Dense layers, activations and losses with hand-written backward passes.

Every layer is a plain ``LayerState`` (spec + parameter arrays + buffers)
driven by two functions:

    Y, cache = layer_forward(state, X, mode, rng)
    dX, dparams = layer_backward(state, cache, dY)

``dparams`` has the same keys and shapes as ``state.params``.  Running
statistics of BatchNorm live in ``state.buffers`` and are never touched by
the optimizer.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRAIN = "train"
INFER = "infer"

L2_EPS = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ContractError(ValueError):
    """Shape, mode or argument violates an operation's precondition."""


class NumericError(FloatingPointError):
    """NaN or Inf reached a module boundary."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_dim <= 0 or self.out_dim <= 0):
            raise ContractError(f"Dense needs positive widths, got {self.in_dim}x{self.out_dim}")
        if self.kind == "batchnorm" and self.in_dim <= 0:
            raise ContractError("BatchNorm needs a positive feature count")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ContractError(f"Dropout rate must lie in [0, 1), got {self.rate}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "rate": self.rate}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], int(d["in_dim"]), int(d["out_dim"]), float(d["rate"]))


LAYER_KINDS = ("dense", "relu", "tanh", "batchnorm", "dropout", "l2norm")


def Dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim, out_dim)


def ReLU() -> LayerSpec:
    return LayerSpec("relu")


def Tanh() -> LayerSpec:
    return LayerSpec("tanh")


def BatchNorm(dim: int) -> LayerSpec:
    return LayerSpec("batchnorm", dim, dim)


def Dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def L2Norm() -> LayerSpec:
    return LayerSpec("l2norm")


@dataclass
class LayerState:
    spec: LayerSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def init_layer(spec: LayerSpec, rng: np.random.Generator) -> LayerState:
    """Allocate parameters for ``spec``; Dense weights are Glorot-uniform."""
    state = LayerState(spec)
    if spec.kind == "dense":
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        state.params["W"] = rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim))
        state.params["b"] = np.zeros(spec.out_dim)
    elif spec.kind == "batchnorm":
        state.params["gamma"] = np.ones(spec.in_dim)
        state.params["beta"] = np.zeros(spec.in_dim)
        state.buffers["running_mean"] = np.zeros(spec.in_dim)
        state.buffers["running_var"] = np.ones(spec.in_dim)
    return state


def check_finite(X: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(X)):
        raise NumericError(f"non-finite values in {where}")


def _as_matrix(X, where: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"{where}: expected a 2-D matrix, got shape {X.shape}")
    return X


def layer_forward(state: LayerState, X, mode: str = TRAIN, rng: np.random.Generator | None = None):
    spec = state.spec
    X = _as_matrix(X, f"{spec.kind} forward")
    check_finite(X, f"{spec.kind} input")
    if mode not in (TRAIN, INFER):
        raise ContractError(f"mode must be {TRAIN!r} or {INFER!r}, got {mode!r}")
    if spec.kind in ("dense", "batchnorm") and X.shape[1] != spec.in_dim:
        raise ContractError(f"{spec.kind}: input width {X.shape[1]} != {spec.in_dim}")

    kind = spec.kind
    if kind == "dense":
        return X @ state.params["W"] + state.params["b"], X
    if kind == "relu":
        return np.maximum(X, 0.0), X
    if kind == "tanh":
        Y = np.tanh(X)
        return Y, Y
    if kind == "l2norm":
        norm = np.maximum(np.linalg.norm(X, axis=1, keepdims=True), L2_EPS)
        Y = X / norm
        return Y, (Y, norm)
    if kind == "dropout":
        if mode == INFER or spec.rate == 0.0:
            return X.copy(), None
        if rng is None:
            raise ContractError("Dropout in train mode needs a generator")
        keep = (rng.random(X.shape) >= spec.rate) / (1.0 - spec.rate)
        return X * keep, keep
    # batchnorm
    gamma, beta = state.params["gamma"], state.params["beta"]
    if mode == INFER:
        std = np.sqrt(state.buffers["running_var"] + BN_EPS)
        return (X - state.buffers["running_mean"]) / std * gamma + beta, None
    if X.shape[0] < 2:
        raise ContractError("BatchNorm in train mode needs a batch of at least 2")
    mean = X.mean(axis=0)
    var = X.var(axis=0)
    std = np.sqrt(var + BN_EPS)
    xhat = (X - mean) / std
    m = BN_MOMENTUM
    state.buffers["running_mean"] = m * state.buffers["running_mean"] + (1 - m) * mean
    state.buffers["running_var"] = m * state.buffers["running_var"] + (1 - m) * var
    return xhat * gamma + beta, (xhat, std)


def layer_backward(state: LayerState, cache, dY):
    spec = state.spec
    dY = _as_matrix(dY, f"{spec.kind} backward")
    kind = spec.kind
    if kind == "dense":
        X = cache
        if dY.shape != (X.shape[0], spec.out_dim):
            raise ContractError(f"dense backward: dY shape {dY.shape} does not match output")
        return dY @ state.params["W"].T, {"W": X.T @ dY, "b": dY.sum(axis=0)}
    if kind == "relu":
        _check_same(cache, dY, kind)
        return dY * (cache > 0), {}
    if kind == "tanh":
        _check_same(cache, dY, kind)
        return dY * (1.0 - cache**2), {}
    if kind == "l2norm":
        Y, norm = cache
        _check_same(Y, dY, kind)
        # (I - y y^T) / |x| applied row-wise
        return (dY - Y * np.sum(dY * Y, axis=1, keepdims=True)) / norm, {}
    if kind == "dropout":
        if cache is None:
            return dY.copy(), {}
        _check_same(cache, dY, kind)
        return dY * cache, {}
    # batchnorm, train-mode cache only
    if cache is None:
        raise ContractError("BatchNorm backward needs a train-mode cache")
    xhat, std = cache
    _check_same(xhat, dY, kind)
    n = dY.shape[0]
    dxhat = dY * state.params["gamma"]
    dX = (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)) / (n * std)
    return dX, {"gamma": np.sum(dY * xhat, axis=0), "beta": dY.sum(axis=0)}


def _check_same(ref: np.ndarray, dY: np.ndarray, kind: str) -> None:
    if ref.shape != dY.shape:
        raise ContractError(f"{kind} backward: dY shape {dY.shape} != cached {ref.shape}")


def network_forward(states: list[LayerState], X, mode: str = TRAIN, rng=None):
    caches = []
    for state in states:
        X, cache = layer_forward(state, X, mode, rng)
        caches.append(cache)
    return X, caches


def network_backward(states: list[LayerState], caches: list, dY):
    grads: list[dict[str, np.ndarray]] = [None] * len(states)
    for i in range(len(states) - 1, -1, -1):
        dY, grads[i] = layer_backward(states[i], caches[i], dY)
    return dY, grads


# ---------------------------------------------------------------- losses


def softmax(logits) -> np.ndarray:
    logits = _as_matrix(logits, "softmax")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def one_hot(labels, n_class: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_class):
        raise ContractError(f"labels outside [0, {n_class})")
    out = np.zeros((labels.size, n_class))
    out[np.arange(labels.size), labels] = 1.0
    return out


def ce_loss(logits, onehot):
    """Mean categorical cross-entropy of softmax(logits); returns (loss, dlogits)."""
    logits = _as_matrix(logits, "ce_loss logits")
    onehot = _as_matrix(onehot, "ce_loss target")
    if logits.shape != onehot.shape:
        raise ContractError(f"ce_loss: logits {logits.shape} vs target {onehot.shape}")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise ContractError("ce_loss: target rows must be one-hot")
    check_finite(logits, "ce_loss logits")
    n = logits.shape[0]
    loss = -np.sum(onehot * log_softmax(logits)) / n
    return float(loss), (softmax(logits) - onehot) / n


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def be_loss(logit, y):
    """Mean binary cross-entropy on sigmoid(logit), log-sum-exp form.

    ``logit`` is (batch, 1); ``y`` holds 0/1 targets.  Returns (loss, dlogit).
    """
    logit = _as_matrix(logit, "be_loss logit")
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if logit.shape[1] != 1 or y.shape[0] != logit.shape[0]:
        raise ContractError(f"be_loss: logit {logit.shape} vs {y.shape[0]} targets")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("be_loss: targets must be 0 or 1")
    check_finite(logit, "be_loss logit")
    n = logit.shape[0]
    # -[y log s(l) + (1-y) log(1-s(l))] = max(l, 0) - l*y + log(1 + exp(-|l|))
    per = np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    return float(per.sum() / n), (sigmoid(logit) - y) / n


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list[dict[str, np.ndarray]]
    v: list[dict[str, np.ndarray]]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[dict[str, np.ndarray]], **kw) -> "AdamState":
        m = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        return cls(m, v, **kw)


def adam_step(adam: AdamState, params: list[dict[str, np.ndarray]], grads: list[dict[str, np.ndarray]], lr: float):
    """One bias-corrected Adam update, in place on ``params`` and ``adam``."""
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(adam.m):
        raise ContractError("adam_step: parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, adam.m):
        if p.keys() != g.keys() or p.keys() != m.keys():
            raise ContractError("adam_step: parameter and gradient keys differ")
        for k in p:
            if p[k].shape != g[k].shape:
                raise ContractError(f"adam_step: {k} shape {p[k].shape} vs grad {g[k].shape}")
    adam.t += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1**adam.t
    c2 = 1.0 - b2**adam.t
    for p, g, m, v in zip(params, grads, adam.m, adam.v):
        for k in p:
            m[k] = b1 * m[k] + (1 - b1) * g[k]
            v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
            p[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + adam.eps)
    return params
