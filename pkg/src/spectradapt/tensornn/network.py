"""Architecture families: MLP, 1-d CNN, and transformers with linear or
nonlinear patch embedders.

The feature extractor is everything up to and including the penultimate
layer (parameters named ``feat.*``); the classification head is the final
dense layer plus softmax (parameters named ``head.*``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..seeding import stream
from . import functional as F
from . import tensor as T
from .tensor import NonFiniteError, Tensor

FAMILIES = ("mlp", "cnn", "tbnn_lin_emb", "tbnn_nonlin_emb")


class ConfigError(ValueError):
    """Invalid network or experiment configuration."""


@dataclass(frozen=True)
class NetworkSpec:
    family: str
    n_bins: int = 1024
    n_classes: int = 8
    dense_widths: tuple[int, ...] = (256,)
    conv_filters: tuple[int, ...] = (8,)
    conv_kernel: int = 5
    embed_dim: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    ff_dim: int = 64
    patch_size: int = 64
    embedder_hidden: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.n_bins <= 0 or self.n_classes < 2:
            raise ConfigError("need n_bins > 0 and n_classes >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.family in ("mlp", "cnn") and not self.dense_widths:
            raise ConfigError("dense_widths must be non-empty")
        if self.family.startswith("tbnn"):
            if self.n_bins % self.patch_size != 0:
                raise ConfigError("patch size must divide n_bins")
            if self.embed_dim % self.n_heads != 0:
                raise ConfigError("heads must divide embedding dim")

    @property
    def n_patches(self) -> int:
        return self.n_bins // self.patch_size

    @property
    def feature_dim(self) -> int:
        if self.family.startswith("tbnn"):
            return self.embed_dim
        return self.dense_widths[-1]


@dataclass
class ParamStore:
    """Named parameter tensors, partitioned into feature (theta) and head
    (phi) groups; `decay` marks parameters subject to weight decay."""

    params: dict[str, Tensor] = field(default_factory=dict)
    decay: dict[str, bool] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray, decay: bool) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = Tensor(data, requires_grad=True)
        self.decay[name] = decay

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def feature_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("feat.")]

    @property
    def head_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("head.")]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self.params.items():
            out.add(name, p.data.copy(), self.decay[name])
        return out

    def detached(self) -> "ParamStore":
        """Read-only view sharing data but recording no gradients."""
        out = ParamStore()
        for name, p in self.params.items():
            out.params[name] = Tensor(p.data, requires_grad=False)
            out.decay[name] = self.decay[name]
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy_from(self, other: "ParamStore", names=None) -> None:
        for name in (names if names is not None else other.params):
            self.params[name].data[...] = other.params[name].data

    def max_abs_diff(self, other: "ParamStore") -> float:
        return max(float(np.max(np.abs(self.params[n].data - other.params[n].data)))
                   for n in self.params)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal truncated at two sigma, then scaled."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def _init_dense(store: ParamStore, rng, name: str, fan_in: int, fan_out: int):
    std = 1.0 / np.sqrt(fan_in)
    store.add(f"{name}.w", _trunc_normal(rng, (fan_in, fan_out), std), decay=True)
    store.add(f"{name}.b", np.zeros(fan_out), decay=False)


def _init_ln(store: ParamStore, name: str, dim: int):
    store.add(f"{name}.g", np.ones(dim), decay=False)
    store.add(f"{name}.b", np.zeros(dim), decay=False)


def build_network(spec: NetworkSpec, seed: int) -> tuple[ParamStore, str]:
    """Create parameters for `spec`, deterministically under `seed`.

    Returns the store and a readable layer-by-layer description.
    """
    rng = stream(seed, "init", spec.family)
    store = ParamStore()
    lines = [f"{spec.family}: {spec.n_bins} bins -> {spec.n_classes} classes"]

    if spec.family == "mlp":
        fan = spec.n_bins
        for i, width in enumerate(spec.dense_widths):
            _init_dense(store, rng, f"feat.dense{i}", fan, width)
            lines.append(f"  dense{i}: {fan} -> {width}, relu, dropout")
            fan = width

    elif spec.family == "cnn":
        cin = 1
        for i, filters in enumerate(spec.conv_filters):
            std = 1.0 / np.sqrt(cin * spec.conv_kernel)
            store.add(f"feat.conv{i}.w",
                      _trunc_normal(rng, (filters, cin, spec.conv_kernel), std),
                      decay=True)
            store.add(f"feat.conv{i}.b", np.zeros(filters), decay=False)
            lines.append(f"  conv{i}: {cin}x{spec.conv_kernel} -> {filters}, "
                         "same padding, relu, dropout")
            cin = filters
        fan = cin * spec.n_bins
        lines.append(f"  flatten: {fan}")
        for i, width in enumerate(spec.dense_widths):
            _init_dense(store, rng, f"feat.dense{i}", fan, width)
            lines.append(f"  dense{i}: {fan} -> {width}, relu, dropout")
            fan = width

    else:
        d, patches = spec.embed_dim, spec.n_patches
        if spec.family == "tbnn_lin_emb":
            _init_dense(store, rng, "feat.embed", spec.patch_size, d)
            lines.append(f"  patch embed (affine): {spec.patch_size} -> {d}")
        else:
            _init_dense(store, rng, "feat.embed.hidden", spec.patch_size,
                        spec.embedder_hidden)
            _init_dense(store, rng, "feat.embed.out", spec.embedder_hidden, d)
            lines.append(f"  patch embed (mlp): {spec.patch_size} -> "
                         f"{spec.embedder_hidden} -> {d}")
        store.add("feat.pos", _trunc_normal(rng, (patches, d), 1.0 / np.sqrt(d)),
                  decay=True)
        lines.append(f"  + position embedding [{patches} x {d}]")
        for i in range(spec.n_blocks):
            blk = f"feat.block{i}"
            _init_ln(store, f"{blk}.ln1", d)
            for proj in ("wq", "wk", "wv", "wo"):
                store.add(f"{blk}.attn.{proj}",
                          _trunc_normal(rng, (d, d), 1.0 / np.sqrt(d)), decay=True)
                store.add(f"{blk}.attn.{proj[1]}b", np.zeros(d), decay=False)
            _init_ln(store, f"{blk}.ln2", d)
            _init_dense(store, rng, f"{blk}.ff.in", d, spec.ff_dim)
            _init_dense(store, rng, f"{blk}.ff.out", spec.ff_dim, d)
            lines.append(f"  block{i}: pre-norm {spec.n_heads}-head attention + "
                         f"gelu ff ({spec.ff_dim}), residual")
        _init_ln(store, "feat.ln_f", d)
        lines.append(f"  final layernorm, mean pool over {patches} patches")

    _init_dense(store, rng, "head", spec.feature_dim, spec.n_classes)
    lines.append(f"  head: {spec.feature_dim} -> {spec.n_classes}, softmax")
    return store, "\n".join(lines)


def _layer(name: str, fn):
    try:
        return fn()
    except NonFiniteError as e:
        raise NonFiniteError(f"{name}:{e.op}") from e


def _attention(store: ParamStore, blk: str, x: Tensor, spec: NetworkSpec,
               train: bool, rng) -> Tensor:
    m, patches, d = x.shape
    heads = spec.n_heads
    dh = d // heads
    flat = T.reshape(x, (m * patches, d))

    def split(t):
        t = T.reshape(t, (m, patches, heads, dh))
        return T.transpose(t, (0, 2, 1, 3))

    q = split(F.linear(flat, store[f"{blk}.attn.wq"], store[f"{blk}.attn.qb"]))
    k = split(F.linear(flat, store[f"{blk}.attn.wk"], store[f"{blk}.attn.kb"]))
    v = split(F.linear(flat, store[f"{blk}.attn.wv"], store[f"{blk}.attn.vb"]))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = F.softmax(scores, axis=-1)
    attn = F.dropout(attn, spec.dropout, rng, train)
    ctx = T.matmul(attn, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (m * patches, d))
    out = F.linear(ctx, store[f"{blk}.attn.wo"], store[f"{blk}.attn.ob"])
    return T.reshape(out, (m, patches, d))


def forward(store: ParamStore, spec: NetworkSpec, batch,
            train_mode: bool = False,
            rng: np.random.Generator | None = None
            ) -> tuple[Tensor, Tensor, Tensor]:
    """Run the network on preprocessed spectra [m x n_bins].

    Returns (features [m x d], logits [m x K], probs [m x K]). Dropout is
    active only in train mode and draws its masks from `rng`.
    """
    x = batch if isinstance(batch, Tensor) else T.constant(batch)
    if x.ndim != 2 or x.shape[1] != spec.n_bins:
        raise ValueError(f"batch must be [m x {spec.n_bins}], got {x.shape}")
    m = x.shape[0]

    if spec.family == "mlp":
        h = x
        for i in range(len(spec.dense_widths)):
            h = _layer(f"dense{i}", lambda h=h, i=i: T.relu(
                F.linear(h, store[f"feat.dense{i}.w"], store[f"feat.dense{i}.b"])))
            h = F.dropout(h, spec.dropout, rng, train_mode)
        features = h

    elif spec.family == "cnn":
        h = T.reshape(x, (m, 1, spec.n_bins))
        for i in range(len(spec.conv_filters)):
            h = _layer(f"conv{i}", lambda h=h, i=i: T.relu(
                T.conv1d(h, store[f"feat.conv{i}.w"], store[f"feat.conv{i}.b"])))
            h = F.dropout(h, spec.dropout, rng, train_mode)
        h = T.reshape(h, (m, -1))
        for i in range(len(spec.dense_widths)):
            h = _layer(f"dense{i}", lambda h=h, i=i: T.relu(
                F.linear(h, store[f"feat.dense{i}.w"], store[f"feat.dense{i}.b"])))
            h = F.dropout(h, spec.dropout, rng, train_mode)
        features = h

    else:
        patches, d = spec.n_patches, spec.embed_dim
        h = T.reshape(x, (m * patches, spec.patch_size))
        if spec.family == "tbnn_lin_emb":
            h = _layer("embed", lambda h=h: F.linear(
                h, store["feat.embed.w"], store["feat.embed.b"]))
        else:
            h = _layer("embed", lambda h=h: F.linear(
                T.relu(F.linear(h, store["feat.embed.hidden.w"],
                                store["feat.embed.hidden.b"])),
                store["feat.embed.out.w"], store["feat.embed.out.b"]))
        h = T.reshape(h, (m, patches, d))
        h = T.add(h, store["feat.pos"])
        for i in range(spec.n_blocks):
            blk = f"feat.block{i}"
            normed = F.layer_norm(h, store[f"{blk}.ln1.g"], store[f"{blk}.ln1.b"])
            att = _layer(f"block{i}.attn",
                         lambda n=normed, b=blk: _attention(store, b, n, spec,
                                                            train_mode, rng))
            h = T.add(h, F.dropout(att, spec.dropout, rng, train_mode))
            normed = F.layer_norm(h, store[f"{blk}.ln2.g"], store[f"{blk}.ln2.b"])
            flat = T.reshape(normed, (m * patches, d))
            ff = _layer(f"block{i}.ff", lambda f=flat, b=blk: F.linear(
                F.gelu(F.linear(f, store[f"{b}.ff.in.w"], store[f"{b}.ff.in.b"])),
                store[f"{b}.ff.out.w"], store[f"{b}.ff.out.b"]))
            ff = T.reshape(ff, (m, patches, d))
            h = T.add(h, F.dropout(ff, spec.dropout, rng, train_mode))
        h = F.layer_norm(h, store["feat.ln_f.g"], store["feat.ln_f.b"])
        features = T.tmean(h, axis=1)

    logits = _layer("head", lambda: F.linear(features, store["head.w"],
                                             store["head.b"]))
    probs = F.softmax(logits, axis=-1)
    return features, logits, probs
