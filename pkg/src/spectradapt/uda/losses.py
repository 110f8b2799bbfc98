"""Differentiable alignment losses shared by the adaptation drivers."""
from __future__ import annotations

import numpy as np

from ..tensornn import functional as F
from ..tensornn import tensor as T
from ..tensornn.tensor import Tensor, as_tensor


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distances between rows of a [n x d] and b [m x d]."""
    aa = T.tsum(T.mul(a, a), axis=1, keepdims=True)
    bb = T.reshape(T.tsum(T.mul(b, b), axis=1), (1, -1))
    cross = T.matmul(a, T.transpose(b, (1, 0)))
    d2 = T.add(T.add(aa, bb), T.mul(cross, -2.0))
    # guard tiny negatives from cancellation so sqrt/exp stay clean
    return T.clamp_min(d2, 0.0)


def median_pairwise_distance(zs: np.ndarray, zt: np.ndarray) -> float:
    """Median Euclidean distance over the pooled sample (off-diagonal)."""
    pooled = np.vstack([np.asarray(zs, float), np.asarray(zt, float)])
    sq = ((pooled[:, None, :] - pooled[None, :, :]) ** 2).sum(-1)
    d = np.sqrt(np.maximum(sq[np.triu_indices_from(sq, k=1)], 0.0))
    return float(np.median(d))


def bandwidth_ladder(base: float, count: int) -> list[float]:
    """Geometric ladder {..., 1/4, 1/2, 1, 2, 4, ...} * base, `count` rungs
    centered on the base bandwidth."""
    if base <= 0 or count < 1:
        raise ValueError("need base > 0 and count >= 1")
    lo = -(count // 2)
    return [base * 2.0 ** (lo + i) for i in range(count)]


def mmd2_multikernel(zs, zt, bandwidths) -> Tensor:
    """Unbiased squared MMD between feature batches, averaged over Gaussian
    RBF bandwidths; within-domain diagonals are omitted.

    k(u, v) = exp(-|u - v|^2 / (2 sigma^2)).
    """
    zs, zt = as_tensor(zs), as_tensor(zt)
    ns, nt = zs.shape[0], zt.shape[0]
    if ns < 2 or nt < 2:
        raise ValueError("insufficient batch: MMD needs >= 2 per domain")
    bandwidths = list(bandwidths)
    if not bandwidths:
        raise ValueError("need at least one bandwidth")
    d_ss = _pairwise_sq_dists(zs, zs)
    d_tt = _pairwise_sq_dists(zt, zt)
    d_st = _pairwise_sq_dists(zs, zt)
    off_s = T.constant(1.0 - np.eye(ns))
    off_t = T.constant(1.0 - np.eye(nt))
    total = None
    for sigma in bandwidths:
        scale = -1.0 / (2.0 * float(sigma) ** 2)
        k_ss = T.tsum(T.mul(T.exp(T.mul(d_ss, scale)), off_s))
        k_tt = T.tsum(T.mul(T.exp(T.mul(d_tt, scale)), off_t))
        k_st = T.tsum(T.exp(T.mul(d_st, scale)))
        est = T.add(T.add(T.mul(k_ss, 1.0 / (ns * (ns - 1))),
                          T.mul(k_tt, 1.0 / (nt * (nt - 1)))),
                    T.mul(k_st, -2.0 / (ns * nt)))
        total = est if total is None else T.add(total, est)
    return T.mul(total, 1.0 / len(bandwidths))


def coral_loss(zs, zt) -> Tensor:
    """Frobenius distance between domain feature covariances, 1/(4 d^2)
    scaled; covariances use 1/(n-1) after mean-centering."""
    zs, zt = as_tensor(zs), as_tensor(zt)
    ns, nt = zs.shape[0], zt.shape[0]
    if ns < 2 or nt < 2:
        raise ValueError("insufficient batch: CORAL needs >= 2 per domain")
    d = zs.shape[1]

    def cov(z, n):
        centered = T.add(z, T.mul(T.tmean(z, axis=0, keepdims=True), -1.0))
        return T.mul(T.matmul(T.transpose(centered, (1, 0)), centered),
                     1.0 / (n - 1))

    diff = T.add(cov(zs, ns), T.mul(cov(zt, nt), -1.0))
    return T.mul(T.tsum(T.mul(diff, diff)), 1.0 / (4.0 * d * d))


def jdot_cost_matrix(zs, zt, probs_t, labels_s, alpha: float, beta: float
                     ) -> Tensor:
    """Pairwise transport costs c_ij = alpha |z_s^i - z_t^j|^2
    + beta CE(probs_t^j, y_s^i)."""
    zs, zt, probs_t = as_tensor(zs), as_tensor(zt), as_tensor(probs_t)
    y = np.asarray(labels_s, dtype=np.float64)
    feat = _pairwise_sq_dists(zs, zt)
    logp = T.log(T.clamp_min(probs_t, F.LOG_CLAMP))
    ce = T.mul(T.matmul(T.constant(y), T.transpose(logp, (1, 0))), -1.0)
    return T.add(T.mul(feat, float(alpha)), T.mul(ce, float(beta)))


def infonce_loss(z1, z2, tau: float) -> Tensor:
    """Symmetric InfoNCE over cosine similarities; diagonal pairs are the
    positives. A single pair (m = 1) carries no contrast and scores 0."""
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    z1, z2 = as_tensor(z1), as_tensor(z2)
    m = z1.shape[0]
    u = F.l2_normalize_rows(z1)
    v = F.l2_normalize_rows(z2)
    if m == 1:
        return T.mul(T.tsum(T.mul(u, v)), 0.0)
    sim = T.mul(T.matmul(u, T.transpose(v, (1, 0))), 1.0 / float(tau))
    diag = T.constant(np.eye(m))

    def directional(s):
        pos = T.tsum(T.mul(s, diag), axis=1)
        return T.tmean(T.add(F.logsumexp(s, axis=1), T.mul(pos, -1.0)))

    return T.mul(T.add(directional(sim), directional(T.transpose(sim, (1, 0)))),
                 0.5)


def consistency_loss(student_probs, teacher_probs) -> Tensor:
    """Mean squared error between student and teacher prediction vectors;
    the teacher side is treated as constant."""
    student_probs = as_tensor(student_probs)
    t = teacher_probs.data if isinstance(teacher_probs, Tensor) \
        else np.asarray(teacher_probs, float)
    return F.mean_squared_rowdiff(student_probs, T.constant(t))
