"""Per-spectrum preprocessing applied before model ingestion."""
from __future__ import annotations

import numpy as np

from .synthesis import Spectrum


def _counts(x) -> np.ndarray:
    if isinstance(x, Spectrum):
        return x.counts
    return np.asarray(x, dtype=np.float64)


def preprocess(x) -> np.ndarray:
    """Variance-stabilizing sqrt followed by a per-spectrum z-score.

    The z-score uses the population (1/N) standard deviation across
    channels. A constant sqrt-spectrum carries no signal and maps to the
    all-zero vector instead of erroring.
    """
    c = _counts(x)
    if np.any(c < 0):
        raise ValueError("counts must be >= 0")
    t = np.sqrt(c)
    mu = t.mean()
    sd = t.std()
    if sd == 0.0:
        return np.zeros_like(t)
    return (t - mu) / sd


def preprocess_batch(counts: np.ndarray) -> np.ndarray:
    """Row-wise preprocess for an [n x bins] counts matrix."""
    c = np.asarray(counts, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("counts must be >= 0")
    t = np.sqrt(c)
    mu = t.mean(axis=1, keepdims=True)
    sd = t.std(axis=1, keepdims=True)
    out = np.zeros_like(t)
    ok = sd[:, 0] > 0
    out[ok] = (t[ok] - mu[ok]) / sd[ok]
    return out


def l1_normalize(x) -> np.ndarray:
    """Scale nonnegative counts to unit l1 mass."""
    c = _counts(x)
    total = c.sum()
    if total <= 0:
        raise ValueError("empty spectrum: cannot l1-normalize zero counts")
    return c / total


def l1_normalize_batch(counts: np.ndarray) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    totals = c.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("empty spectrum: cannot l1-normalize zero counts")
    return c / totals
