"""AdamW-style optimizer with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .network import ParamStore


class AdamW:
    """Adam with bias correction; weight decay decoupled from the moments
    and applied only to parameters flagged for decay (no biases, no
    normalization gains)."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0 or weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, store: ParamStore, names: list[str] | None = None) -> None:
        """Update parameters in place from their accumulated gradients.

        Parameters with no gradient are treated as zero-gradient (weight
        decay still applies).
        """
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in (names if names is not None else store.names()):
            p = store[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
            m, v = self.moments[name]
            if self.weight_decay > 0.0 and store.decay[name]:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
