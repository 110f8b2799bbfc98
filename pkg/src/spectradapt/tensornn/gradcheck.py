"""Finite-difference verification harness for every differentiable piece.

Each registered case builds leaf tensors and a scalar-valued closure; the
analytic gradient from the reverse sweep is compared elementwise against
central differences (h = 1e-5) on the same leaves.
"""
from __future__ import annotations

import numpy as np

from ..seeding import stream
from . import functional as F
from . import tensor as T
from .network import NetworkSpec, build_network, forward
from .tensor import Tensor

H = 1e-5


def _numeric_grad(leaf: Tensor, closure) -> np.ndarray:
    num = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    out = num.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + H
        up = closure().item()
        flat[i] = orig - H
        down = closure().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * H)
    return num


def compare(leaves: list[Tensor], closure) -> float:
    """Max elementwise relative error between analytic and numeric grads."""
    for leaf in leaves:
        leaf.grad = None
    closure().backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = _numeric_grad(leaf, closure)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    return worst


def _leaf(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def _away_from_kinks(rng, *shape, margin=0.05):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, margin + np.abs(x), x)
    return Tensor(x, requires_grad=True)


def _simplex_rows(rng, m, k):
    y = rng.random((m, k)) + 0.1
    return y / y.sum(axis=1, keepdims=True)


# -- case builders: seed -> (leaves, closure) --------------------------------

def _case_elementwise(seed):
    rng = stream(seed, "gc", "elementwise")
    x = _away_from_kinks(rng, 4, 5)
    w = _leaf(rng, 4, 5)

    def closure():
        h = T.relu(x)
        h = T.add(h, T.tanh(x))
        h = T.add(h, T.sigmoid(T.mul(x, w)))
        h = T.add(h, T.softplus(x))
        h = T.add(h, T.erf(x))
        h = T.mul(h, T.exp(T.mul(x, 0.1)))
        h = T.add(h, T.sqrt(T.add(T.mul(x, x), 1.0)))
        h = T.add(h, T.log(T.add(T.mul(x, x), 0.5)))
        return T.tsum(T.mul(h, h))

    return [x, w], closure


def _case_clamp(seed):
    rng = stream(seed, "gc", "clamp")
    x = _away_from_kinks(rng, 6, margin=0.2)

    def closure():
        return T.tsum(T.log(T.clamp_min(T.mul(x, x), 1e-12)))

    return [x], closure


def _case_matmul(seed):
    rng = stream(seed, "gc", "matmul")
    a = _leaf(rng, 3, 4)
    b = _leaf(rng, 4, 5)

    def closure():
        return T.tsum(T.power(T.matmul(a, b), 2.0))

    return [a, b], closure


def _case_matmul_batched(seed):
    rng = stream(seed, "gc", "bmm")
    a = _leaf(rng, 2, 3, 3, 4)
    b = _leaf(rng, 2, 3, 4, 2)

    def closure():
        return T.tsum(T.tanh(T.matmul(a, b)))

    return [a, b], closure


def _case_reshape_transpose_concat(seed):
    rng = stream(seed, "gc", "shape")
    a = _leaf(rng, 2, 6)
    b = _leaf(rng, 3, 4)

    def closure():
        u = T.transpose(T.reshape(a, (3, 4)), (1, 0))
        v = T.transpose(b, (1, 0))
        return T.tsum(T.mul(T.concat([u, v], axis=1), 1.7).mean(axis=0))

    return [a, b], closure


def _case_dense(seed):
    rng = stream(seed, "gc", "dense")
    x = _leaf(rng, 4, 6)
    w = _leaf(rng, 6, 3)
    b = _leaf(rng, 3)

    def closure():
        return T.tsum(T.relu(F.linear(x, w, b)))

    return [x, w, b], closure


def _case_conv1d(seed):
    rng = stream(seed, "gc", "conv")
    x = _leaf(rng, 2, 3, 10)
    w = _leaf(rng, 4, 3, 5)
    b = _leaf(rng, 4)

    def closure():
        same = T.conv1d(x, w, b, padding="same")
        valid = T.conv1d(x, w, b, padding="valid")
        return T.add(T.tsum(T.tanh(same)), T.tsum(T.mul(valid, valid)))

    return [x, w, b], closure


def _case_softmax(seed):
    rng = stream(seed, "gc", "softmax")
    x = _leaf(rng, 3, 5)
    r = stream(seed, "gc", "softmax-r").standard_normal((3, 5))

    def closure():
        return T.tsum(T.mul(F.softmax(x), T.constant(r)))

    return [x], closure


def _case_layernorm(seed):
    rng = stream(seed, "gc", "ln")
    x = _leaf(rng, 4, 6)
    g = _leaf(rng, 6, offset=1.0)
    b = _leaf(rng, 6)

    def closure():
        return T.tsum(T.power(F.layer_norm(x, g, b), 2.0))

    return [x, g, b], closure


def _case_gelu(seed):
    rng = stream(seed, "gc", "gelu")
    x = _leaf(rng, 5, 4)

    def closure():
        return T.tsum(T.mul(F.gelu(x), 0.5))

    return [x], closure


def _case_dropout_fixed_mask(seed):
    rng = stream(seed, "gc", "dropout")
    x = _leaf(rng, 4, 6)
    mask = (stream(seed, "gc", "dropout-mask").random((4, 6)) < 0.8) / 0.8

    def closure():
        return T.tsum(T.power(T.mul(x, T.constant(mask)), 2.0))

    return [x], closure


def _case_softmax_xent(seed):
    rng = stream(seed, "gc", "sx")
    logits = _leaf(rng, 4, 5)
    y = _simplex_rows(stream(seed, "gc", "sx-y"), 4, 5)

    def closure():
        return F.cross_entropy(F.softmax(logits), y)

    return [logits], closure


def _case_cross_entropy(seed):
    rng = stream(seed, "gc", "ce")
    raw = Tensor(rng.random((4, 5)) + 0.2, requires_grad=True)
    y = _simplex_rows(stream(seed, "gc", "ce-y"), 4, 5)

    def closure():
        probs = raw / T.tsum(raw, axis=-1, keepdims=True)
        return F.cross_entropy(probs, y)

    return [raw], closure


def _case_bce(seed):
    rng = stream(seed, "gc", "bce")
    logits = _leaf(rng, 8, 1)
    t = (stream(seed, "gc", "bce-t").random(8) < 0.5).astype(float)

    def closure():
        return F.bce_with_logits(logits, t)

    return [logits], closure


def _case_attention_block(seed):
    spec = NetworkSpec(family="tbnn_lin_emb", n_bins=32, n_classes=3,
                       embed_dim=8, n_blocks=1, n_heads=2, ff_dim=12,
                       patch_size=8)
    store, _ = build_network(spec, subkey(seed, 1))
    x = _leaf(stream(seed, "gc", "attn-x"), 2, 32)
    leaves = [store[n] for n in store.names()] + [x]

    def closure():
        _, _, probs = forward(store, spec, x)
        return T.tsum(T.mul(probs, T.constant(_fixed_dir(seed, probs.shape))))

    return leaves, closure


def _case_mlp_full(seed):
    spec = NetworkSpec(family="mlp", n_bins=12, n_classes=3, dense_widths=(7, 5))
    store, _ = build_network(spec, subkey(seed, 2))
    x = _leaf(stream(seed, "gc", "mlp-x"), 3, 12)
    y = _simplex_rows(stream(seed, "gc", "mlp-y"), 3, 3)
    leaves = [store[n] for n in store.names()] + [x]

    def closure():
        _, _, probs = forward(store, spec, x)
        return F.cross_entropy(probs, y)

    return leaves, closure


def _case_cnn_full(seed):
    spec = NetworkSpec(family="cnn", n_bins=12, n_classes=3,
                       conv_filters=(3,), conv_kernel=3, dense_widths=(6,))
    store, _ = build_network(spec, subkey(seed, 3))
    x = _leaf(stream(seed, "gc", "cnn-x"), 2, 12)
    y = _simplex_rows(stream(seed, "gc", "cnn-y"), 2, 3)
    leaves = [store[n] for n in store.names()] + [x]

    def closure():
        _, _, probs = forward(store, spec, x)
        return F.cross_entropy(probs, y)

    return leaves, closure


def _case_tbnn_nonlin_full(seed):
    spec = NetworkSpec(family="tbnn_nonlin_emb", n_bins=16, n_classes=3,
                       embed_dim=6, n_blocks=1, n_heads=3, ff_dim=8,
                       patch_size=4, embedder_hidden=5)
    store, _ = build_network(spec, subkey(seed, 4))
    x = _leaf(stream(seed, "gc", "tb-x"), 2, 16)
    y = _simplex_rows(stream(seed, "gc", "tb-y"), 2, 3)
    leaves = [store[n] for n in store.names()] + [x]

    def closure():
        _, _, probs = forward(store, spec, x)
        return F.cross_entropy(probs, y)

    return leaves, closure


def _case_mmd(seed):
    from ..uda.losses import mmd2_multikernel
    rng = stream(seed, "gc", "mmd")
    zs = _leaf(rng, 4, 3)
    zt = _leaf(rng, 3, 3)

    def closure():
        return mmd2_multikernel(zs, zt, bandwidths=[0.7, 1.3])

    return [zs, zt], closure


def _case_coral(seed):
    from ..uda.losses import coral_loss
    rng = stream(seed, "gc", "coral")
    zs = _leaf(rng, 5, 3)
    zt = _leaf(rng, 4, 3)

    def closure():
        return coral_loss(zs, zt)

    return [zs, zt], closure


def _case_infonce(seed):
    from ..uda.losses import infonce_loss
    rng = stream(seed, "gc", "nce")
    z1 = _leaf(rng, 4, 5)
    z2 = _leaf(rng, 4, 5)

    def closure():
        return infonce_loss(z1, z2, tau=0.5)

    return [z1, z2], closure


def _case_jdot_cost(seed):
    from ..uda.losses import jdot_cost_matrix
    rng = stream(seed, "gc", "jdot")
    zs = _leaf(rng, 3, 4)
    zt = _leaf(rng, 2, 4)
    raw = Tensor(stream(seed, "gc", "jdot-p").random((2, 3)) + 0.2,
                 requires_grad=True)
    ys = _simplex_rows(stream(seed, "gc", "jdot-y"), 3, 3)
    gamma = stream(seed, "gc", "jdot-g").random((3, 2)) + 0.1
    gamma /= gamma.sum()

    def closure():
        probs_t = raw / T.tsum(raw, axis=-1, keepdims=True)
        c = jdot_cost_matrix(zs, zt, probs_t, ys, alpha=0.8, beta=1.2)
        return T.tsum(T.mul(c, T.constant(gamma)))

    return [zs, zt, raw], closure


def _case_consistency(seed):
    rng = stream(seed, "gc", "cons")
    a = _leaf(rng, 3, 4)
    b = stream(seed, "gc", "cons-b").standard_normal((3, 4))

    def closure():
        pa = F.softmax(a)
        return F.mean_squared_rowdiff(pa, T.constant(b))

    return [a], closure


def _case_grad_reverse_path(seed):
    """The reversal layer's effective objective for upstream parameters is
    -kappa times the downstream loss; the numeric oracle differentiates that
    objective directly while the analytic path goes through the layer."""
    kappa = 0.7
    rng = stream(seed, "gc", "grl")
    x = _leaf(rng, 4, 3)
    w = stream(seed, "gc", "grl-w").standard_normal((3, 1))
    t = (stream(seed, "gc", "grl-t").random(4) < 0.5).astype(float)

    def downstream(xx):
        return F.bce_with_logits(T.matmul(xx, T.constant(w)), t)

    def analytic_closure():
        return downstream(T.grad_reverse(x, kappa))

    def numeric_closure():
        return T.mul(downstream(x), -kappa)

    return [x], (analytic_closure, numeric_closure)


def subkey(seed, i):
    return (int(seed) * 1_000_003 + i) & ((1 << 63) - 1)


def _fixed_dir(seed, shape):
    return stream(seed, "gc", "dir").standard_normal(shape)


CASES = {
    "elementwise": _case_elementwise,
    "clamp_log": _case_clamp,
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "shape_ops": _case_reshape_transpose_concat,
    "dense": _case_dense,
    "conv1d": _case_conv1d,
    "softmax": _case_softmax,
    "layernorm": _case_layernorm,
    "gelu": _case_gelu,
    "dropout_fixed_mask": _case_dropout_fixed_mask,
    "softmax_xent": _case_softmax_xent,
    "cross_entropy": _case_cross_entropy,
    "bce_logits": _case_bce,
    "attention_block": _case_attention_block,
    "mlp_full": _case_mlp_full,
    "cnn_full": _case_cnn_full,
    "tbnn_nonlin_full": _case_tbnn_nonlin_full,
    "mmd2": _case_mmd,
    "coral": _case_coral,
    "infonce": _case_infonce,
    "jdot_cost": _case_jdot_cost,
    "consistency": _case_consistency,
    "grad_reverse_path": _case_grad_reverse_path,
}


def grad_check(opname: str, seed: int = 0) -> float:
    """Max relative analytic-vs-central-difference error for one case."""
    if opname not in CASES:
        raise KeyError(f"no registered gradient case {opname!r}")
    leaves, closure = CASES[opname](seed)
    if isinstance(closure, tuple):
        analytic_closure, numeric_closure = closure
        for leaf in leaves:
            leaf.grad = None
        analytic_closure().backward()
        worst = 0.0
        for leaf in leaves:
            analytic = leaf.grad
            numeric = _numeric_grad(leaf, numeric_closure)
            scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
        return worst
    return compare(leaves, closure)


def run_all(seed: int = 0) -> dict[str, float]:
    return {name: grad_check(name, seed) for name in CASES}
