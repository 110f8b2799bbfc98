"""Training-loop drivers: source pretraining plus the seven adaptation
methods, all sharing one epoch/selection scaffold.

RNG discipline: every stochastic ingredient (source shuffling, target
shuffling, source dropout, target dropout, view noise, auxiliary-net init)
draws from its own named stream derived from the run seed. A method whose
tradeoff/strength is zero therefore consumes exactly the streams a plain
source-only continuation would, and reproduces it bit for bit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..seeding import stream
from ..spectra.dataset import Dataset, UnlabeledDataset
from ..spectra.transforms import preprocess_batch
from ..tensornn import functional as F
from ..tensornn import tensor as T
from ..tensornn.network import (NetworkSpec, ParamStore, _init_dense,
                                forward as _network_forward)
from ..tensornn.optim import AdamW
from ..tensornn.tensor import NonFiniteError, Tensor
from . import losses
from .sinkhorn import sinkhorn

VAL_TERM_CAP = 512  # items per domain used for the validation method term

METHODS = ("source_only", "adda", "dan", "dann", "coral", "deepjdot",
           "mean_teacher", "simclr")


class NumericalAbort(RuntimeError):
    """Training produced non-finite values; carries where it happened."""


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Dense stack ending in a single domain logit (sigmoid at the
    probability interface)."""

    in_dim: int
    widths: tuple[int, ...] = (64,)


def build_discriminator(spec: DiscriminatorSpec, seed: int) -> ParamStore:
    rng = stream(seed, "disc-init")
    store = ParamStore()
    fan = spec.in_dim
    for i, width in enumerate(spec.widths):
        _init_dense(store, rng, f"disc.dense{i}", fan, width)
        fan = width
    _init_dense(store, rng, "disc.out", fan, 1)
    return store


def discriminator_logits(store: ParamStore, z: Tensor) -> Tensor:
    h = z
    i = 0
    while f"disc.dense{i}.w" in store.params:
        h = T.relu(F.linear(h, store[f"disc.dense{i}.w"],
                            store[f"disc.dense{i}.b"]))
        i += 1
    return F.linear(h, store["disc.out.w"], store["disc.out.b"])


def build_projection(in_dim: int, widths: tuple[int, ...], seed: int
                     ) -> ParamStore:
    rng = stream(seed, "proj-init")
    store = ParamStore()
    fan = in_dim
    for i, width in enumerate(widths):
        _init_dense(store, rng, f"proj.dense{i}", fan, width)
        fan = width
    return store


def projection_forward(store: ParamStore, z: Tensor) -> Tensor:
    n = len([k for k in store.params if k.endswith(".w")])
    h = z
    for i in range(n):
        h = F.linear(h, store[f"proj.dense{i}.w"], store[f"proj.dense{i}.b"])
        if i < n - 1:
            h = T.relu(h)
    return h


@dataclass(frozen=True)
class UdaHyper:
    """Hyperparameters for one adaptation run; unused fields are ignored by
    methods that do not read them."""

    method: str = "source_only"
    lr: float = 1e-3
    disc_lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 10
    weight_decay: float = 0.0
    tradeoff: float = 1.0                      # lambda
    kappa: float = 0.5                         # DANN adversarial strength
    mmd_bandwidth: float | None = None         # None: per-batch median heuristic
    mmd_kernels: int = 5
    jdot_alpha: float = 1.0
    jdot_beta: float = 1.0
    sinkhorn_epsilon: float = 0.1
    sinkhorn_iterations: int = 20
    ema_decay: float = 0.99                    # mu
    effective_counts: float = 1e4
    temperature: float = 0.1                   # tau
    projection_widths: tuple[int, ...] = (64,)
    disc_widths: tuple[int, ...] = (64,)
    selection: str = "proxy"                   # proxy | labeled

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.tradeoff < 0 or self.kappa < 0:
            raise ValueError("tradeoff and kappa must be >= 0")
        if self.sinkhorn_epsilon <= 0 or self.sinkhorn_iterations < 1:
            raise ValueError("sinkhorn needs epsilon > 0 and iterations >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 2 or self.epochs < 0:
            raise ValueError("need batch_size >= 2 and epochs >= 0")
        if self.selection not in ("proxy", "labeled"):
            raise ValueError("selection must be 'proxy' or 'labeled'")


@dataclass
class AdaptData:
    """Training/validation views handed to a driver. Target training data
    is label-stripped; labeled target validation is optional and used only
    under the explicit labeled-selection flag."""

    src_train: Dataset
    tgt_train: UnlabeledDataset | None
    src_val: Dataset
    tgt_val: UnlabeledDataset | None = None
    tgt_val_labeled: Dataset | None = None


@dataclass
class EpochRecord:
    epoch: int
    src_loss: float
    uda_term: float
    val_criterion: float


@dataclass
class AdaptResult:
    params: ParamStore
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    method: str = "source_only"
    aux: dict = field(default_factory=dict)

    def log_dict(self) -> dict:
        return {"method": self.method, "best_epoch": self.best_epoch,
                "epochs": [vars(r) for r in self.history]}


class _Cycler:
    """Endless shuffled index batches; reshuffles when exhausted and drops
    ragged remainders so every batch is full."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        if n < batch:
            raise ValueError(f"dataset of {n} items smaller than batch {batch}")
        self.n = n
        self.batch = batch
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return out


def _poisson_views(rows: np.ndarray, effective_counts: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Batched poisson_resample: one stochastic view per row."""
    totals = rows.sum(axis=1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    rates = effective_counts * rows / safe
    views = rng.poisson(rates).astype(np.float64)
    views[totals[:, 0] == 0] = 0.0
    return views


@dataclass
class _Ctx:
    """Everything one adaptation run needs, precomputed once."""

    spec: NetworkSpec
    params: ParamStore
    hyper: UdaHyper
    seed: int
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray | None
    xs_val: np.ndarray
    ys_val: np.ndarray
    xt_val: np.ndarray | None
    tgt_counts: np.ndarray | None = None       # raw target counts for views
    tgt_val_counts: np.ndarray | None = None
    x_tval_labeled: np.ndarray | None = None
    y_tval_labeled: np.ndarray | None = None
    src_cycle: _Cycler = None
    tgt_cycle: _Cycler = None
    drop_src: np.random.Generator = None
    drop_tgt: np.random.Generator = None
    views_rng: np.random.Generator = None

    @property
    def steps_per_epoch(self) -> int:
        ns = self.xs.shape[0]
        nt = self.xt.shape[0] if self.xt is not None else 0
        return max(1, max(ns, nt) // self.hyper.batch_size)


def _make_ctx(spec: NetworkSpec, params: ParamStore, data: AdaptData,
              hyper: UdaHyper, seed: int, need_views: bool = False) -> _Ctx:
    xt = None
    tgt_counts = None
    tgt_val_counts = None
    xt_val = None
    if data.tgt_train is not None:
        tgt_counts = data.tgt_train.counts
        xt = preprocess_batch(tgt_counts)
    if data.tgt_val is not None:
        tgt_val_counts = data.tgt_val.counts[:VAL_TERM_CAP]
        xt_val = preprocess_batch(tgt_val_counts)
    ctx = _Ctx(
        spec=spec, params=params, hyper=hyper, seed=seed,
        xs=preprocess_batch(data.src_train.counts),
        ys=data.src_train.labels,
        xt=xt,
        xs_val=preprocess_batch(data.src_val.counts),
        ys_val=data.src_val.labels,
        xt_val=xt_val,
        tgt_counts=tgt_counts if need_views else None,
        tgt_val_counts=tgt_val_counts if need_views else None,
    )
    if hyper.selection == "labeled":
        if data.tgt_val_labeled is None:
            raise ValueError("labeled selection requires tgt_val_labeled")
        ctx.x_tval_labeled = preprocess_batch(data.tgt_val_labeled.counts)
        ctx.y_tval_labeled = data.tgt_val_labeled.labels
    ctx.src_cycle = _Cycler(ctx.xs.shape[0], hyper.batch_size,
                            stream(seed, "shuffle-src"))
    if xt is not None:
        ctx.tgt_cycle = _Cycler(xt.shape[0], hyper.batch_size,
                                stream(seed, "shuffle-tgt"))
    ctx.drop_src = stream(seed, "dropout-src")
    ctx.drop_tgt = stream(seed, "dropout-tgt")
    ctx.views_rng = stream(seed, "views")
    return ctx


def _eval_ce(params: ParamStore, spec: NetworkSpec, x: np.ndarray,
             y: np.ndarray) -> float:
    frozen = params.detached()
    total = 0.0
    n = x.shape[0]
    for start in range(0, n, 1024):
        xb = x[start:start + 1024]
        yb = y[start:start + 1024]
        _, _, probs = _forward(frozen, spec, xb, train=False)
        total += F.cross_entropy(probs, yb).item() * xb.shape[0]
    return total / n


def _forward(params, spec, x, train, rng=None):
    return _network_forward(params, spec, x, train_mode=train, rng=rng)


def eval_features_probs(params: ParamStore, spec: NetworkSpec, x: np.ndarray,
                        batch: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic eval-mode features and probabilities."""
    frozen = params.detached()
    feats, probs = [], []
    for start in range(0, x.shape[0], batch):
        z, _, p = _forward(frozen, spec, x[start:start + batch], train=False)
        feats.append(z.data)
        probs.append(p.data)
    return np.vstack(feats), np.vstack(probs)


def _mmd_bandwidths(hyper: UdaHyper, zs: np.ndarray, zt: np.ndarray
                    ) -> list[float]:
    base = hyper.mmd_bandwidth
    if base is None:
        base = losses.median_pairwise_distance(zs, zt)
        if base <= 0:
            base = 1.0
    return losses.bandwidth_ladder(base, hyper.mmd_kernels)


def _run(ctx: _Ctx, step_fn, val_term_fn, updatable: list[str],
         extra_optimizers=(), method: str = "source_only",
         after_step=None) -> AdaptResult:
    """Shared epoch loop: step over paired minibatches, evaluate the
    validation criterion each epoch, keep the best-epoch parameters."""
    hyper = ctx.hyper
    optimizer = AdamW(lr=hyper.lr, weight_decay=hyper.weight_decay)
    best = (np.inf, 0, ctx.params.copy())
    history: list[EpochRecord] = []
    for epoch in range(1, hyper.epochs + 1):
        src_sum = 0.0
        term_sum = 0.0
        for step in range(ctx.steps_per_epoch):
            try:
                ctx.params.zero_grad()
                for opt_store, _ in extra_optimizers:
                    opt_store.zero_grad()
                src_loss, term = step_fn()
                src_sum += src_loss
                term_sum += term
                optimizer.step(ctx.params, updatable)
                for opt_store, opt in extra_optimizers:
                    opt.step(opt_store)
                if after_step is not None:
                    after_step()
            except NonFiniteError as e:
                raise NumericalAbort(
                    f"{method}: non-finite value at epoch {epoch} step {step} "
                    f"({e.op}); src_loss so far {src_sum:.4g}") from e
        val = _validation_criterion(ctx, val_term_fn)
        history.append(EpochRecord(epoch=epoch,
                                   src_loss=src_sum / ctx.steps_per_epoch,
                                   uda_term=term_sum / ctx.steps_per_epoch,
                                   val_criterion=val))
        if val < best[0]:
            best = (val, epoch, ctx.params.copy())
    if hyper.epochs == 0:
        return AdaptResult(params=ctx.params.copy(), best_epoch=0,
                           history=history, method=method)
    return AdaptResult(params=best[2], best_epoch=best[1], history=history,
                       method=method)


def _validation_criterion(ctx: _Ctx, val_term_fn) -> float:
    if ctx.hyper.selection == "labeled":
        return _eval_ce(ctx.params, ctx.spec, ctx.x_tval_labeled,
                        ctx.y_tval_labeled)
    crit = _eval_ce(ctx.params, ctx.spec, ctx.xs_val, ctx.ys_val)
    if val_term_fn is not None:
        crit += val_term_fn()
    return crit


def _src_step(ctx: _Ctx):
    """One supervised step on a source minibatch; returns (loss, graph)."""
    idx = ctx.src_cycle.next()
    xb = ctx.xs[idx]
    yb = ctx.ys[idx]
    _, _, probs = _forward(ctx.params, ctx.spec, xb, train=True,
                           rng=ctx.drop_src)
    return F.cross_entropy(probs, yb)


def _val_features(ctx: _Ctx) -> tuple[np.ndarray, np.ndarray]:
    zs, _ = eval_features_probs(ctx.params, ctx.spec,
                                ctx.xs_val[:VAL_TERM_CAP])
    zt, _ = eval_features_probs(ctx.params, ctx.spec, ctx.xt_val)
    return zs, zt


# -- source-only -------------------------------------------------------------

def pretrain_source(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                    hyper: UdaHyper, seed: int) -> AdaptResult:
    """Minimize the supervised cross-entropy on the source domain with
    validation-loss epoch selection."""
    ctx = _make_ctx(spec, params, replace_targets(data), hyper, seed)

    def step():
        loss = _src_step(ctx)
        loss.backward()
        return loss.item(), 0.0

    return _run(ctx, step, None, ctx.params.names(), method="source_only")


def replace_targets(data: AdaptData) -> AdaptData:
    return AdaptData(src_train=data.src_train, tgt_train=None,
                     src_val=data.src_val, tgt_val=None,
                     tgt_val_labeled=data.tgt_val_labeled)


def source_continue(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                    hyper: UdaHyper, seed: int) -> AdaptResult:
    """Continue plain source training from a checkpoint, pacing epochs like
    an adaptation run (steps per epoch use max(n_s, n_t)); the reference
    trajectory for every tradeoff-zero reduction contract."""
    ctx = _make_ctx(spec, params, data, hyper, seed)

    def step():
        loss = _src_step(ctx)
        loss.backward()
        return loss.item(), 0.0

    return _run(ctx, step, None, ctx.params.names(), method="source_only")


# -- penalty-style methods: DAN / DeepCORAL / DeepJDOT -----------------------

def _penalty_driver(spec, params, data, hyper, seed, method, term_builder,
                    val_term):
    ctx = _make_ctx(spec, params, data, hyper, seed)
    lam = hyper.tradeoff

    def step():
        loss = _src_step(ctx)
        term_val = 0.0
        if lam > 0:
            idx_t = ctx.tgt_cycle.next()
            term = term_builder(ctx, idx_t)
            term_val = term.item()
            loss = T.add(loss, T.mul(term, lam))
        loss.backward()
        return loss.item() - lam * term_val, term_val

    return _run(ctx, step, (lambda: val_term(ctx)) if lam > 0 else None,
                ctx.params.names(), method=method)


def dan_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
              hyper: UdaHyper, seed: int) -> AdaptResult:
    """Source loss plus multi-kernel MMD^2 between domain feature batches."""

    def term(ctx, idx_t):
        idx_s = ctx.src_cycle.next()
        zs, _, _ = _forward(ctx.params, ctx.spec, ctx.xs[idx_s], train=True,
                            rng=ctx.drop_src)
        zt, _, _ = _forward(ctx.params, ctx.spec, ctx.xt[idx_t], train=True,
                            rng=ctx.drop_tgt)
        bws = _mmd_bandwidths(hyper, zs.data, zt.data)
        return losses.mmd2_multikernel(zs, zt, bws)

    def val_term(ctx):
        zs, zt = _val_features(ctx)
        bws = _mmd_bandwidths(hyper, zs, zt)
        return hyper.tradeoff * losses.mmd2_multikernel(
            T.constant(zs), T.constant(zt), bws).item()

    return _penalty_driver(spec, params, data, hyper, seed, "dan", term,
                           val_term)


def coral_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                hyper: UdaHyper, seed: int) -> AdaptResult:
    """Source loss plus covariance alignment of domain feature batches."""

    def term(ctx, idx_t):
        idx_s = ctx.src_cycle.next()
        zs, _, _ = _forward(ctx.params, ctx.spec, ctx.xs[idx_s], train=True,
                            rng=ctx.drop_src)
        zt, _, _ = _forward(ctx.params, ctx.spec, ctx.xt[idx_t], train=True,
                            rng=ctx.drop_tgt)
        return losses.coral_loss(zs, zt)

    def val_term(ctx):
        zs, zt = _val_features(ctx)
        return hyper.tradeoff * losses.coral_loss(
            T.constant(zs), T.constant(zt)).item()

    return _penalty_driver(spec, params, data, hyper, seed, "coral", term,
                           val_term)


def _jdot_ot_term(ctx: _Ctx, zs, zt, probs_t, ys) -> Tensor:
    hyper = ctx.hyper
    cost = losses.jdot_cost_matrix(zs, zt, probs_t, ys,
                                   alpha=hyper.jdot_alpha,
                                   beta=hyper.jdot_beta)
    plan = sinkhorn(cost.data, hyper.sinkhorn_epsilon,
                    hyper.sinkhorn_iterations)
    # the plan is a per-batch constant: gradients flow through costs only
    return T.tsum(T.mul(cost, T.constant(plan.gamma)))


def deepjdot_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                   hyper: UdaHyper, seed: int) -> AdaptResult:
    """Source loss plus transport-weighted joint feature/label costs, with
    the Sinkhorn plan recomputed per minibatch and held constant."""

    def term(ctx, idx_t):
        idx_s = ctx.src_cycle.next()
        zs, _, _ = _forward(ctx.params, ctx.spec, ctx.xs[idx_s], train=True,
                            rng=ctx.drop_src)
        zt, _, probs_t = _forward(ctx.params, ctx.spec, ctx.xt[idx_t],
                                  train=True, rng=ctx.drop_tgt)
        return _jdot_ot_term(ctx, zs, zt, probs_t, ctx.ys[idx_s])

    def val_term(ctx):
        m = min(VAL_TERM_CAP, ctx.xs_val.shape[0], ctx.xt_val.shape[0])
        frozen = ctx.params.detached()
        zs, _, _ = _forward(frozen, ctx.spec, ctx.xs_val[:m], train=False)
        zt, _, probs_t = _forward(frozen, ctx.spec, ctx.xt_val[:m],
                                  train=False)
        return hyper.tradeoff * _jdot_ot_term(
            ctx, zs, zt, probs_t, ctx.ys_val[:m]).item()

    return _penalty_driver(spec, params, data, hyper, seed, "deepjdot", term,
                           val_term)


# -- adversarial methods -----------------------------------------------------

class _CollapseMonitor:
    """Warn when the domain discriminator is perfect for a whole epoch."""

    def __init__(self, method: str):
        self.method = method
        self.correct = 0
        self.total = 0

    def record(self, logits: np.ndarray, labels: np.ndarray) -> None:
        pred = (logits.ravel() > 0.0).astype(float)
        self.correct += int((pred == labels.ravel()).sum())
        self.total += labels.size

    def end_epoch(self, epoch: int) -> None:
        if self.total and self.correct == self.total:
            warnings.warn(f"adversarial collapse: {self.method} discriminator "
                          f"at accuracy 1.0 through epoch {epoch}")
        self.correct = 0
        self.total = 0


def dann_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
               hyper: UdaHyper, seed: int,
               disc: ParamStore | None = None) -> AdaptResult:
    """Simultaneous min-max through a gradient reversal layer: the
    discriminator fits domain labels on same-step concatenated features
    while the feature extractor receives the -kappa-scaled gradient."""
    ctx = _make_ctx(spec, params, data, hyper, seed)
    kappa = hyper.kappa
    if disc is None:
        disc = build_discriminator(
            DiscriminatorSpec(in_dim=spec.feature_dim,
                              widths=hyper.disc_widths), seed)
    disc_opt = AdamW(lr=hyper.disc_lr, weight_decay=hyper.weight_decay)
    monitor = _CollapseMonitor("dann")
    domain_labels = np.concatenate([np.zeros(hyper.batch_size),
                                    np.ones(hyper.batch_size)])
    steps_seen = [0]

    def step():
        idx_s = ctx.src_cycle.next()
        xb, yb = ctx.xs[idx_s], ctx.ys[idx_s]
        zs, _, probs = _forward(ctx.params, ctx.spec, xb, train=True,
                                rng=ctx.drop_src)
        loss = F.cross_entropy(probs, yb)
        term_val = 0.0
        if kappa > 0:
            idx_t = ctx.tgt_cycle.next()
            zt, _, _ = _forward(ctx.params, ctx.spec, ctx.xt[idx_t],
                                train=True, rng=ctx.drop_tgt)
            feats = T.concat([zs, zt], axis=0)
            logits_d = discriminator_logits(disc, T.grad_reverse(feats, kappa))
            d_loss = F.bce_with_logits(logits_d, domain_labels)
            monitor.record(logits_d.data, domain_labels)
            term_val = d_loss.item()
            loss = T.add(loss, d_loss)
        loss.backward()
        steps_seen[0] += 1
        if steps_seen[0] % ctx.steps_per_epoch == 0:
            monitor.end_epoch(steps_seen[0] // ctx.steps_per_epoch)
        return loss.item() - term_val, term_val

    def val_term():
        zs, zt = _val_features(ctx)
        feats = T.constant(np.vstack([zs, zt]))
        labels = np.concatenate([np.zeros(zs.shape[0]), np.ones(zt.shape[0])])
        bce = F.bce_with_logits(discriminator_logits(disc.detached(), feats),
                                labels).item()
        # the (theta, phi) objective rewards a confused discriminator
        return -kappa * bce

    return _run(ctx, step, val_term if kappa > 0 else None,
                ctx.params.names(),
                extra_optimizers=((disc, disc_opt),) if kappa > 0 else (),
                method="dann")


def adda_adapt(spec: NetworkSpec, source_params: ParamStore, data: AdaptData,
               hyper: UdaHyper, seed: int) -> AdaptResult:
    """Alternating adversarial alignment of a target feature extractor
    against precomputed source features; the classifier head is never
    touched."""
    params = source_params.copy()           # theta_t starts at theta
    ctx = _make_ctx(spec, params, data, hyper, seed)
    disc = build_discriminator(
        DiscriminatorSpec(in_dim=spec.feature_dim, widths=hyper.disc_widths),
        seed)
    disc_opt = AdamW(lr=hyper.disc_lr, weight_decay=hyper.weight_decay)
    enc_opt = AdamW(lr=hyper.lr, weight_decay=hyper.weight_decay)
    monitor = _CollapseMonitor("adda")
    # theta is frozen, so source features are a fixed design matrix
    src_feats, _ = eval_features_probs(source_params, spec, ctx.xs)
    src_cycle = _Cycler(src_feats.shape[0], hyper.batch_size,
                        stream(seed, "shuffle-src-feats"))
    best = (np.inf, 0, params.copy())
    history: list[EpochRecord] = []
    feature_names = params.feature_names
    domain_labels = np.concatenate([np.zeros(hyper.batch_size),
                                    np.ones(hyper.batch_size)])
    for epoch in range(1, hyper.epochs + 1):
        d_sum = 0.0
        e_sum = 0.0
        for step_i in range(ctx.steps_per_epoch):
            try:
                zs_const = T.constant(src_feats[src_cycle.next()])
                idx_t = ctx.tgt_cycle.next()
                params.zero_grad()
                zt, _, _ = _forward(params, spec, ctx.xt[idx_t], train=True,
                                    rng=ctx.drop_tgt)
                # 1) discriminator: source -> 0, target -> 1
                disc.zero_grad()
                both = T.concat([zs_const, zt.detach()], axis=0)
                logits_d = discriminator_logits(disc, both)
                d_loss = F.bce_with_logits(logits_d, domain_labels)
                d_loss.backward()
                disc_opt.step(disc)
                monitor.record(logits_d.data, domain_labels)
                # 2) encoder against the updated discriminator, as printed:
                #    minimize E[-log(1 - d(f(x_t)))] = E[softplus(logit)]
                enc_logits = discriminator_logits(disc.detached(), zt)
                e_loss = T.tmean(T.softplus(enc_logits))
                e_loss.backward()
                enc_opt.step(params, feature_names)
                d_sum += d_loss.item()
                e_sum += e_loss.item()
            except NonFiniteError as e:
                raise NumericalAbort(
                    f"adda: non-finite value at epoch {epoch} step {step_i} "
                    f"({e.op})") from e
        monitor.end_epoch(epoch)
        if hyper.selection == "labeled":
            val = _eval_ce(params, spec, ctx.x_tval_labeled,
                           ctx.y_tval_labeled)
        else:
            zt_val, _ = eval_features_probs(params, spec, ctx.xt_val)
            val = float(np.mean(np.logaddexp(0.0, discriminator_logits(
                disc.detached(), T.constant(zt_val)).data)))
        history.append(EpochRecord(epoch=epoch, src_loss=d_sum /
                                   ctx.steps_per_epoch,
                                   uda_term=e_sum / ctx.steps_per_epoch,
                                   val_criterion=val))
        if val < best[0]:
            best = (val, epoch, params.copy())
    out = best[2] if hyper.epochs > 0 else params.copy()
    for name in out.head_names:
        if not np.array_equal(out[name].data, source_params[name].data):
            raise AssertionError("adda mutated the frozen classifier head")
    return AdaptResult(params=out, best_epoch=best[1] if hyper.epochs else 0,
                       history=history, method="adda")


# -- view-consistency methods ------------------------------------------------

def mean_teacher_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                       hyper: UdaHyper, seed: int
                       ) -> tuple[AdaptResult, ParamStore]:
    """Student minimizes source loss plus squared probability disagreement
    with an EMA teacher across two Poisson views of each target spectrum."""
    ctx = _make_ctx(spec, params, data, hyper, seed, need_views=True)
    lam = hyper.tradeoff
    mu = hyper.ema_decay
    teacher = params.copy()

    def step():
        loss = _src_step(ctx)
        term_val = 0.0
        if lam > 0:
            idx_t = ctx.tgt_cycle.next()
            rows = ctx.tgt_counts[idx_t]
            v1 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                                 ctx.views_rng))
            v2 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                                 ctx.views_rng))
            _, _, p_student = _forward(ctx.params, ctx.spec, v1, train=True,
                                       rng=ctx.drop_tgt)
            _, _, p_teacher = _forward(teacher.detached(), ctx.spec, v2,
                                       train=False)
            term = losses.consistency_loss(p_student, p_teacher)
            term_val = term.item()
            loss = T.add(loss, T.mul(term, lam))
        loss.backward()
        return loss.item() - lam * term_val, term_val

    def ema_update():
        for name in teacher.params:
            t = teacher[name].data
            t *= mu
            t += (1.0 - mu) * ctx.params[name].data

    def val_term():
        rows = ctx.tgt_val_counts
        view_rng = stream(seed, "val-views")
        v1 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                             view_rng))
        v2 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                             view_rng))
        _, _, p1 = _forward(ctx.params.detached(), ctx.spec, v1, train=False)
        _, _, p2 = _forward(teacher.detached(), ctx.spec, v2, train=False)
        return lam * losses.consistency_loss(p1, p2).item()

    result = _run(ctx, step, val_term if lam > 0 else None,
                  ctx.params.names(), method="mean_teacher",
                  after_step=ema_update if lam > 0 else None)
    return result, teacher


def simclr_adapt(spec: NetworkSpec, params: ParamStore, data: AdaptData,
                 hyper: UdaHyper, seed: int) -> AdaptResult:
    """Source loss plus InfoNCE between projected features of two Poisson
    views per target spectrum; the projection head is discarded at
    evaluation."""
    ctx = _make_ctx(spec, params, data, hyper, seed, need_views=True)
    lam = hyper.tradeoff
    proj = build_projection(spec.feature_dim, hyper.projection_widths, seed)
    proj_opt = AdamW(lr=hyper.lr, weight_decay=hyper.weight_decay)

    def step():
        loss = _src_step(ctx)
        term_val = 0.0
        if lam > 0:
            idx_t = ctx.tgt_cycle.next()
            rows = ctx.tgt_counts[idx_t]
            v1 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                                 ctx.views_rng))
            v2 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                                 ctx.views_rng))
            z1, _, _ = _forward(ctx.params, ctx.spec, v1, train=True,
                                rng=ctx.drop_tgt)
            z2, _, _ = _forward(ctx.params, ctx.spec, v2, train=True,
                                rng=ctx.drop_tgt)
            term = losses.infonce_loss(projection_forward(proj, z1),
                                       projection_forward(proj, z2),
                                       hyper.temperature)
            term_val = term.item()
            loss = T.add(loss, T.mul(term, lam))
        loss.backward()
        return loss.item() - lam * term_val, term_val

    def val_term():
        rows = ctx.tgt_val_counts
        view_rng = stream(seed, "val-views")
        v1 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                             view_rng))
        v2 = preprocess_batch(_poisson_views(rows, hyper.effective_counts,
                                             view_rng))
        frozen = ctx.params.detached()
        z1, _, _ = _forward(frozen, ctx.spec, v1, train=False)
        z2, _, _ = _forward(frozen, ctx.spec, v2, train=False)
        fp = proj.detached()
        return lam * losses.infonce_loss(projection_forward(fp, z1),
                                         projection_forward(fp, z2),
                                         hyper.temperature).item()

    result = _run(ctx, step, val_term if lam > 0 else None,
                  ctx.params.names(),
                  extra_optimizers=((proj, proj_opt),) if lam > 0 else (),
                  method="simclr")
    result.aux["projection"] = proj
    return result


DRIVERS = {
    "dan": dan_adapt,
    "coral": coral_adapt,
    "deepjdot": deepjdot_adapt,
    "dann": dann_adapt,
    "adda": adda_adapt,
    "simclr": simclr_adapt,
}


def adapt(method: str, spec: NetworkSpec, params: ParamStore,
          data: AdaptData, hyper: UdaHyper, seed: int) -> AdaptResult:
    """Dispatch one adaptation method; `params` is never mutated."""
    hyper = replace(hyper, method=method)
    working = params.copy()
    if method == "source_only":
        return source_continue(spec, working, data, hyper, seed)
    if method == "mean_teacher":
        result, _ = mean_teacher_adapt(spec, working, data, hyper, seed)
        return result
    return DRIVERS[method](spec, working, data, hyper, seed)
