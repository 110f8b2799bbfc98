"""Entropic optimal transport with uniform marginals, log-domain scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class TransportPlan:
    """Soft matching between source and target batch items."""

    gamma: np.ndarray
    marginal_violation: float
    iterations: int

    def __post_init__(self):
        if np.any(self.gamma < 0):
            raise ValueError("transport plan entries must be >= 0")


def sinkhorn(cost: np.ndarray, epsilon: float, iterations: int) -> TransportPlan:
    """Entropic-regularized plan for `cost` with uniform marginals.

    All scaling updates run in the log domain; the reported violation is the
    max absolute row/column marginal error after the final iteration.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    c = np.asarray(cost, dtype=np.float64)
    ns, nt = c.shape
    log_k = -c / epsilon
    if not np.all(np.isfinite(log_k)):
        raise FloatingPointError("regularization too small")
    log_mu = -np.log(ns)
    log_nu = -np.log(nt)
    f = np.zeros(ns)
    g = np.zeros(nt)
    for _ in range(iterations):
        f = log_mu - logsumexp(log_k + g[None, :], axis=1)
        g = log_nu - logsumexp(log_k + f[:, None], axis=0)
    gamma = np.exp(f[:, None] + log_k + g[None, :])
    if not np.all(np.isfinite(gamma)):
        raise FloatingPointError("regularization too small")
    row_err = np.max(np.abs(gamma.sum(axis=1) - 1.0 / ns))
    col_err = np.max(np.abs(gamma.sum(axis=0) - 1.0 / nt))
    return TransportPlan(gamma=gamma,
                         marginal_violation=float(max(row_err, col_err)),
                         iterations=iterations)
