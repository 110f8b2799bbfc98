"""Composite differentiable functions built from the tensor primitives."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

LOG_CLAMP = 1e-12


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # shift by the detached row max: exact by shift invariance, overflow-safe
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = T.exp(T.add(x, T.constant(-shift)))
    return e / T.tsum(e, axis=axis, keepdims=True)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = T.exp(T.add(x, T.constant(-shift)))
    out = T.log(T.tsum(e, axis=axis, keepdims=True))
    out = T.add(out, T.constant(shift))
    if not keepdims:
        out = T.reshape(out, np.sum(e.data, axis=axis).shape)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = T.tmean(x, axis=-1, keepdims=True)
    centered = T.add(x, T.mul(mu, -1.0))
    var = T.tmean(T.mul(centered, centered), axis=-1, keepdims=True)
    inv = T.power(T.add(var, eps), -0.5)
    return T.add(T.mul(T.mul(centered, inv), gain), bias)


def gelu(x: Tensor) -> Tensor:
    # exact erf form: x * Phi(x)
    phi = T.mul(T.add(T.erf(T.mul(x, 1.0 / np.sqrt(2.0))), 1.0), 0.5)
    return T.mul(x, phi)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode requires a generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return T.mul(x, T.constant(mask))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean over the batch of -sum_k y_k log p_k, with log clamped at 1e-12.

    `labels` are simplex rows (one-hot or mixed); they are treated as
    constants.
    """
    probs = as_tensor(probs)
    y = np.asarray(labels, dtype=np.float64)
    if probs.shape != y.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {y.shape}")
    logp = T.log(T.clamp_min(probs, LOG_CLAMP))
    per_item = T.tsum(T.mul(logp, T.constant(-y)), axis=-1)
    return T.tmean(per_item)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Binary cross-entropy from raw logits, overflow-safe.

    -[t log s(l) + (1-t) log(1-s(l))] == t*softplus(-l) + (1-t)*softplus(l)
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    pos = T.mul(T.softplus(T.mul(logits, -1.0)), T.constant(t))
    neg = T.mul(T.softplus(logits), T.constant(1.0 - t))
    return T.tmean(T.add(pos, neg))


def mean_squared_rowdiff(a: Tensor, b: Tensor) -> Tensor:
    """Mean over rows of the squared l2 distance between matching rows."""
    d = T.add(a, T.mul(b, -1.0))
    return T.tmean(T.tsum(T.mul(d, d), axis=-1))


def l2_normalize_rows(x: Tensor, min_norm: float = 0.0) -> Tensor:
    sq = T.tsum(T.mul(x, x), axis=-1, keepdims=True)
    norms = np.sqrt(sq.data)
    if np.any(norms <= min_norm):
        raise ValueError("degenerate embedding")
    return T.mul(x, T.power(sq, -0.5))
