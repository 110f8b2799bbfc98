"""Domain-shift characterization: probe AUROC, kernel MMD with permutation
test, class-conditional Wasserstein ratio, and stratified bootstrap CIs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .seeding import stream
from .spectra.dataset import Dataset
from .spectra.transforms import l1_normalize_batch, preprocess_batch

PROBE_EPOCHS = 200
PROBE_SPLIT = 0.8


def auroc(scores, binary_labels) -> float:
    """Mann-Whitney AUROC; tied scores contribute 1/2 per pair."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(binary_labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ProbeDiscriminator:
    """Linear domain probe trained by full-batch logistic-loss gradient
    descent (no regularization); measurement only, never training signal."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def scores(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / self.scale
        logits = z @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-logits))


def fit_probe(x: np.ndarray, y: np.ndarray, epochs: int = PROBE_EPOCHS,
              lr: float = 1.0) -> ProbeDiscriminator:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0) * np.sqrt(x.shape[1])
    z = (x - mean) / scale
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(z @ w + b)))
        err = p - y
        w -= lr * (z.T @ err) / len(y)
        b -= lr * float(err.mean())
    return ProbeDiscriminator(weights=w, bias=b, mean=mean, scale=scale)


def probe_auroc(xs: np.ndarray, xt: np.ndarray, seed: int,
                split: float = PROBE_SPLIT) -> float:
    """Fit a logistic probe on a train split of pooled source(0)/target(1)
    rows and report held-out AUROC."""
    x = np.vstack([xs, xt])
    y = np.concatenate([np.zeros(len(xs)), np.ones(len(xt))])
    order = stream(seed, "probe-split").permutation(len(y))
    cut = int(round(split * len(y)))
    if cut < 2 or len(y) - cut < 2:
        raise ValueError("degenerate probe split")
    train, test = order[:cut], order[cut:]
    if len(np.unique(y[train])) < 2 or len(np.unique(y[test])) < 2:
        raise ValueError("degenerate probe split: single-class side")
    probe = fit_probe(x[train], y[train])
    return auroc(probe.scores(x[test]), y[test])


# -- kernel MMD on inputs ----------------------------------------------------

def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(1)[:, None]
    bb = (b * b).sum(1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def median_heuristic_bandwidth(pooled: np.ndarray) -> float:
    d2 = _sq_dists(pooled, pooled)
    vals = np.sqrt(d2[np.triu_indices_from(d2, k=1)])
    med = float(np.median(vals)) if vals.size else 0.0
    if med <= 0:
        warnings.warn("all points identical: median bandwidth fell back to 1.0")
        return 1.0
    return med


def _unbiased_from_kernel(k: np.ndarray, ns: int) -> float:
    k_ss = k[:ns, :ns]
    k_tt = k[ns:, ns:]
    k_st = k[:ns, ns:]
    nt = k_tt.shape[0]
    within_s = (k_ss.sum() - np.trace(k_ss)) / (ns * (ns - 1))
    within_t = (k_tt.sum() - np.trace(k_tt)) / (nt * (nt - 1))
    return float(within_s + within_t - 2.0 * k_st.mean())


def mmd2_input_space(xs: np.ndarray, xt: np.ndarray,
                     bandwidth: float | None = None) -> float:
    """Unbiased squared MMD between l1-normalized spectra with an RBF
    kernel; bandwidth defaults to the pooled median heuristic."""
    xs = np.asarray(xs, float)
    xt = np.asarray(xt, float)
    if len(xs) < 2 or len(xt) < 2:
        raise ValueError("insufficient batch: MMD needs >= 2 per side")
    pooled = np.vstack([xs, xt])
    sigma = median_heuristic_bandwidth(pooled) if bandwidth is None \
        else float(bandwidth)
    k = np.exp(-_sq_dists(pooled, pooled) / (2.0 * sigma * sigma))
    return _unbiased_from_kernel(k, len(xs))


def permutation_test_mmd(xs: np.ndarray, xt: np.ndarray, permutations: int,
                         seed: int) -> float:
    """p = (1 + #{permuted MMD^2 >= observed}) / (P + 1); the bandwidth is
    the pooled median heuristic, which is permutation-invariant."""
    if permutations < 99:
        raise ValueError("use at least 99 permutations")
    xs = np.asarray(xs, float)
    xt = np.asarray(xt, float)
    ns = len(xs)
    pooled = np.vstack([xs, xt])
    sigma = median_heuristic_bandwidth(pooled)
    k = np.exp(-_sq_dists(pooled, pooled) / (2.0 * sigma * sigma))
    observed = _unbiased_from_kernel(k, ns)
    rng = stream(seed, "mmd-perm")
    n = len(pooled)
    exceed = 0
    for _ in range(permutations):
        perm = rng.permutation(n)
        kp = k[np.ix_(perm, perm)]
        if _unbiased_from_kernel(kp, ns) >= observed:
            exceed += 1
    return (1.0 + exceed) / (permutations + 1.0)


# -- Wasserstein ratio --------------------------------------------------------

def wasserstein1_1d(p: np.ndarray, q: np.ndarray) -> float:
    """W1 between unit-mass histograms on a shared grid, in channel units."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError("histograms must share the grid")
    if abs(p.sum() - 1.0) > 1e-6 or abs(q.sum() - 1.0) > 1e-6:
        raise ValueError("normalization violation: histograms must sum to 1")
    return float(np.abs(np.cumsum(p - q)).sum())


def _w1_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.abs(np.cumsum(p - q, axis=1)).sum(axis=1)


def _distinct_pairs(rng: np.random.Generator, n: int, size: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    i = rng.integers(n, size=size)
    j = rng.integers(n - 1, size=size)
    j = j + (j >= i)
    return i, j


def _check_one_hot(labels: np.ndarray) -> np.ndarray:
    if np.any(np.abs(labels.max(axis=1) - 1.0) > 1e-9):
        raise ValueError("Wasserstein ratio needs one-hot labels")
    return np.argmax(labels, axis=1)


def _r_from_arrays(xs: np.ndarray, cs: np.ndarray, xt: np.ndarray,
                   ct: np.ndarray, n_classes: int, pairs_per_class: int,
                   rng: np.random.Generator) -> float:
    xs = l1_normalize_batch(xs)
    xt = l1_normalize_batch(xt)
    num = 0.0
    den = 0.0
    used = 0
    for c in range(n_classes):
        s_idx = np.flatnonzero(cs == c)
        t_idx = np.flatnonzero(ct == c)
        if len(s_idx) < 2 or len(t_idx) < 2:
            warnings.warn(f"class {c} skipped in Wasserstein ratio "
                          "(needs >= 2 items per domain)")
            continue
        i = rng.integers(len(s_idx), size=pairs_per_class)
        j = rng.integers(len(t_idx), size=pairs_per_class)
        w_st = _w1_rows(xs[s_idx[i]], xt[t_idx[j]]).mean()
        i, j = _distinct_pairs(rng, len(s_idx), pairs_per_class)
        w_ss = _w1_rows(xs[s_idx[i]], xs[s_idx[j]]).mean()
        i, j = _distinct_pairs(rng, len(t_idx), pairs_per_class)
        w_tt = _w1_rows(xt[t_idx[i]], xt[t_idx[j]]).mean()
        num += w_st
        den += 0.5 * (w_ss + w_tt)
        used += 1
    if used == 0 or den == 0:
        raise ValueError("no usable classes for Wasserstein ratio")
    return num / den


def wasserstein_ratio_r(ds: Dataset, dt: Dataset, pairs_per_class: int = 200,
                        seed: int = 0) -> float:
    """Between-domain over within-domain class-conditional expected pairwise
    W1 distance of l1-normalized spectra (Monte-Carlo pair sampling)."""
    cs = _check_one_hot(ds.labels)
    ct = _check_one_hot(dt.labels)
    return _r_from_arrays(ds.counts, cs, dt.counts, ct, ds.n_classes,
                          pairs_per_class, stream(seed, "wratio"))


# -- stratified bootstrap -----------------------------------------------------

def _coerce(side) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(side, Dataset):
        return side.counts, side.class_ids
    x, c = side
    return np.asarray(x), np.asarray(c)


def _resample_stratum(x, c, rng):
    idx = np.empty(0, dtype=int)
    for cls in np.unique(c):
        members = np.flatnonzero(c == cls)
        if members.size == 0:
            raise ValueError("empty stratum")
        idx = np.concatenate([idx, rng.choice(members, size=members.size,
                                              replace=True)])
    return x[idx], c[idx]


def stratified_bootstrap_samples(statistic, source, target, b: int,
                                 seed: int) -> np.ndarray:
    """Bootstrap replicates of `statistic(xs, cs, xt, ct)`, resampling with
    replacement within every (domain x class) stratum. Replicate seeds are
    derived from (seed, index), so results are worker-count invariant."""
    xs, cs = _coerce(source)
    xt, ct = _coerce(target)
    values = np.empty(b)
    for i in range(b):
        rng = stream(seed, "boot", i)
        xsb, csb = _resample_stratum(xs, cs, rng)
        xtb, ctb = _resample_stratum(xt, ct, rng)
        values[i] = statistic(xsb, csb, xtb, ctb)
    return values


def stratified_bootstrap_ci(statistic, source, target, b: int = 200,
                            level: float = 0.95, seed: int = 0
                            ) -> tuple[float, float]:
    """Percentile interval at `level` from stratified bootstrap replicates."""
    if b < 100:
        raise ValueError("use at least 100 bootstrap replicates")
    values = stratified_bootstrap_samples(statistic, source, target, b, seed)
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [alpha, 100.0 - alpha])
    return float(lo), float(hi)


def bootstrap_p_greater(samples: np.ndarray, null: float) -> float:
    """One-sided bootstrap p-value for the alternative statistic > null."""
    samples = np.asarray(samples)
    return float((1.0 + (samples <= null).sum()) / (len(samples) + 1.0))


# -- the full report ----------------------------------------------------------

@dataclass
class MetricInterval:
    value: float
    lo: float
    hi: float
    p_value: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("CI lower bound exceeds upper bound")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p-value outside [0, 1]")

    def to_dict(self) -> dict:
        return {"value": self.value, "ci": [self.lo, self.hi],
                "p_value": self.p_value}


@dataclass
class GapReport:
    auroc_inputs: MetricInterval
    mmd2: MetricInterval
    r_ratio: MetricInterval
    auroc_features: MetricInterval | None
    bootstrap: int
    permutations: int
    level: float
    pairs_per_class: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "auroc_inputs": self.auroc_inputs.to_dict(),
            "auroc_features": (self.auroc_features.to_dict()
                               if self.auroc_features else None),
            "mmd2": self.mmd2.to_dict(),
            "r_ratio": self.r_ratio.to_dict(),
            "config": {"bootstrap": self.bootstrap,
                       "permutations": self.permutations,
                       "level": self.level,
                       "pairs_per_class": self.pairs_per_class,
                       "seed": self.seed},
        }


def gap_report(ds: Dataset, dt: Dataset, model=None, b: int = 200,
               permutations: int = 199, level: float = 0.95,
               pairs_per_class: int = 200, seed: int = 0) -> GapReport:
    """All §-style separability metrics between two labeled datasets.

    `model` is an optional (params, spec) pair enabling the feature-space
    probe. Spectra feed the input probe preprocessed and the MMD/R metrics
    l1-normalized.
    """
    from .uda.drivers import eval_features_probs

    xs_in = preprocess_batch(ds.counts)
    xt_in = preprocess_batch(dt.counts)
    cs = ds.class_ids
    ct = dt.class_ids

    alpha = 100.0 * (1.0 - level) / 2.0

    def interval(statistic, src, tgt, null) -> MetricInterval:
        value = statistic(src[0], src[1], tgt[0], tgt[1])
        samples = stratified_bootstrap_samples(statistic, src, tgt, b=b,
                                               seed=seed)
        lo, hi = np.percentile(samples, [alpha, 100.0 - alpha])
        return MetricInterval(value, float(lo), float(hi),
                              bootstrap_p_greater(samples, null))

    def probe_stat(a, _ca, bb, _cb):
        return probe_auroc(a, bb, seed=seed)

    auroc_inputs = interval(probe_stat, (xs_in, cs), (xt_in, ct), null=0.5)

    auroc_features = None
    if model is not None:
        params, spec = model
        zs, _ = eval_features_probs(params, spec, xs_in)
        zt, _ = eval_features_probs(params, spec, xt_in)
        auroc_features = interval(probe_stat, (zs, cs), (zt, ct), null=0.5)

    xs_l1 = l1_normalize_batch(ds.counts)
    xt_l1 = l1_normalize_batch(dt.counts)

    def mmd_stat(a, _ca, bb, _cb):
        return mmd2_input_space(a, bb)

    mmd2 = interval(mmd_stat, (xs_l1, cs), (xt_l1, ct), null=0.0)
    mmd2.p_value = permutation_test_mmd(xs_l1, xt_l1, permutations, seed)

    def r_stat(a, ca, bb, cb):
        return _r_from_arrays(a, ca, bb, cb, ds.n_classes, pairs_per_class,
                              stream(seed, "wratio"))

    r_ratio = interval(r_stat, (ds.counts, cs), (dt.counts, ct), null=1.0)

    return GapReport(auroc_inputs=auroc_inputs, auroc_features=auroc_features,
                     mmd2=mmd2, r_ratio=r_ratio, bootstrap=b,
                     permutations=permutations, level=level,
                     pairs_per_class=pairs_per_class, seed=seed)
