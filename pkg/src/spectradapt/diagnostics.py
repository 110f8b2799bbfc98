"""Scoring and diagnostics for prediction sets, plus the paired
signed-rank test used for model comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy
from scipy.stats import rankdata

from .gapmetrics import auroc
from .tensornn import functional as F
from .tensornn.network import NetworkSpec, ParamStore, forward
from .tensornn.tensor import Tensor

LOG_CLAMP = 1e-12
ECE_BINS = 15
KNN_K = 10
WILCOXON_EXACT_MAX = 20


@dataclass
class PredictionSet:
    """Predictions and targets for one model on one dataset; inputs are the
    preprocessed spectra (needed by the k-NN and Jacobian metrics)."""

    probs: np.ndarray
    labels: np.ndarray
    inputs: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.probs.shape != self.labels.shape:
            raise ValueError("probs and labels shapes differ")
        for name, arr in (("probs", self.probs), ("labels", self.labels)):
            if np.any(arr < -1e-9) or \
                    np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError(f"{name} rows must lie on the simplex")

    def __len__(self) -> int:
        return self.probs.shape[0]

    @property
    def true_class(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    @property
    def pred_class(self) -> np.ndarray:
        # ties resolved to the lowest class index
        return np.argmax(self.probs, axis=1)


def ape_score(preds: PredictionSet) -> float:
    """1 - mean total-variation distance between predicted and true simplex
    vectors; 1 is perfect reconstruction, 0 maximal deviation."""
    l1 = np.abs(preds.probs - preds.labels).sum(axis=1)
    return float(1.0 - l1.mean() / 2.0)


def accuracy(preds: PredictionSet) -> float:
    return float((preds.pred_class == preds.true_class).mean())


def nll(preds: PredictionSet) -> float:
    p_true = preds.probs[np.arange(len(preds)), preds.true_class]
    return float(-np.log(np.maximum(p_true, LOG_CLAMP)).mean())


def brier(preds: PredictionSet) -> float:
    return float(((preds.probs - preds.labels) ** 2).sum(axis=1).mean())


def ece(preds: PredictionSet, bins: int = ECE_BINS) -> float:
    """Equal-width binning of top-1 confidence; weighted mean absolute
    accuracy-confidence gap."""
    conf = preds.probs.max(axis=1)
    correct = (preds.pred_class == preds.true_class).astype(np.float64)
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    n = len(preds)
    for b in range(bins):
        members = idx == b
        n_b = int(members.sum())
        if n_b == 0:
            continue
        total += (n_b / n) * abs(correct[members].mean() - conf[members].mean())
    return float(total)


def _margins(preds: PredictionSet) -> np.ndarray:
    logp = np.log(np.maximum(preds.probs, LOG_CLAMP))
    true = preds.true_class
    rows = np.arange(len(preds))
    true_logp = logp[rows, true]
    masked = logp.copy()
    masked[rows, true] = -np.inf
    return true_logp - masked.max(axis=1)


def margins(preds: PredictionSet) -> tuple[float, float]:
    """(mean, 10th percentile) of the true-vs-best-alternative
    log-probability margin; the percentile interpolates linearly."""
    m = _margins(preds)
    return float(m.mean()), float(np.percentile(m, 10.0))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    return -xlogy(probs, probs).sum(axis=1)


def auroc_entropy(preds: PredictionSet) -> float:
    """AUROC of predictive entropy for flagging misclassified items."""
    wrong = (preds.pred_class != preds.true_class).astype(int)
    if wrong.min() == wrong.max():
        raise ValueError("degenerate classes: need both correct and "
                         "incorrect predictions")
    return auroc(entropy_rows(preds.probs), wrong)


def mean_jacobian_norm(params: ParamStore, spec: NetworkSpec,
                       inputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over items of the squared l2 norm of d loss / d input at the
    preprocessed input. Items are independent, so one batched backward pass
    of the summed loss recovers every per-item gradient."""
    x = Tensor(np.asarray(inputs, float), requires_grad=True)
    _, _, probs = forward(params.detached(), spec, x, train_mode=False)
    loss = F.cross_entropy(probs, labels)
    loss.backward()
    grads = x.grad * x.shape[0]  # undo the mean over items
    return float((grads ** 2).sum(axis=1).mean())


def knn_metrics(preds: PredictionSet, k: int = KNN_K
                ) -> tuple[float, float, float, float]:
    """(tv_hard, prob_l2, conf_absdiff, margin_absdiff) averaged over the
    directed k-NN edges of the preprocessed inputs (Euclidean metric,
    distance ties broken by index)."""
    if preds.inputs is None:
        raise ValueError("knn metrics need input vectors")
    x = np.asarray(preds.inputs, float)
    n = x.shape[0]
    if n <= k:
        raise ValueError("need more items than neighbors")
    d2 = np.maximum((x * x).sum(1)[:, None] + (x * x).sum(1)[None, :]
                    - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, -1.0)  # self sorts first, then gets dropped
    order = np.argsort(d2, axis=1, kind="stable")
    nbrs = order[:, 1:k + 1]
    src = np.repeat(np.arange(n), k)
    dst = nbrs.ravel()
    cls = preds.pred_class
    conf = preds.probs.max(axis=1)
    marg = _margins(preds)
    tv_hard = float((cls[src] != cls[dst]).mean())
    prob_l2 = float(((preds.probs[src] - preds.probs[dst]) ** 2)
                    .sum(axis=1).mean())
    conf_absdiff = float(np.abs(conf[src] - conf[dst]).mean())
    margin_absdiff = float(np.abs(marg[src] - marg[dst]).mean())
    return tv_hard, prob_l2, conf_absdiff, margin_absdiff


# -- Wilcoxon signed-rank -----------------------------------------------------

def _exact_tail_probs(ranks2: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W+ >= w), P(W+ <= w) for doubled ranks under the sign-flip null."""
    total = int(ranks2.sum())
    dp = np.zeros(total + 1)
    dp[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(dp)
        shifted[r:] = dp[:total + 1 - r]
        dp = dp + shifted
    dp /= 2.0 ** len(ranks2)
    return float(dp[w2:].sum()), float(dp[:w2 + 1].sum())


def _normal_tail_probs(d: np.ndarray, w_plus: float) -> tuple[float, float]:
    n = len(d)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var -= float((counts ** 3 - counts).sum()) / 48.0
    sd = math.sqrt(var)
    z_hi = (w_plus - mu - 0.5) / sd
    z_lo = (w_plus - mu + 0.5) / sd
    p_ge = 0.5 * math.erfc(z_hi / math.sqrt(2.0))
    p_le = 0.5 * (1.0 + math.erf(z_lo / math.sqrt(2.0)))
    return p_ge, p_le


def wilcoxon_signed_rank(a, b, alternative: str = "greater") -> float:
    """Paired signed-rank test; zero differences are dropped. Exact
    enumeration of the sign-flip distribution for n <= 20, normal
    approximation with tie correction above.

    'greater' tests whether A tends to exceed B.
    """
    if alternative not in ("greater", "two_sided"):
        raise ValueError("alternative must be 'greater' or 'two_sided'")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length score vectors")
    if len(a) < 5:
        raise ValueError("need at least 5 pairs")
    d = a - b
    d = d[d != 0.0]
    if len(d) == 0:
        raise ValueError("no information: all paired differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if len(d) <= WILCOXON_EXACT_MAX:
        ranks2 = np.round(2.0 * ranks).astype(int)
        w2 = int(round(2.0 * w_plus))
        p_ge, p_le = _exact_tail_probs(ranks2, w2)
    else:
        p_ge, p_le = _normal_tail_probs(d, w_plus)
    if alternative == "greater":
        return min(1.0, p_ge)
    return min(1.0, 2.0 * min(p_ge, p_le))


# -- the battery --------------------------------------------------------------

METRIC_NAMES = ("accuracy", "nll", "brier", "ece", "margin_mean",
                "margin_p10", "auroc_entropy", "jacobian_norm", "knn_tv_hard",
                "knn_prob_l2", "knn_conf_absdiff", "knn_margin_absdiff")


@dataclass
class DiagnosticsRow:
    model_id: str
    seed: int
    scenario: str
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.values.items():
            if not math.isfinite(v):
                raise ValueError(f"metric {name} is not finite")

    def as_list(self) -> list[float]:
        return [self.values[name] for name in METRIC_NAMES]


def compute_diagnostics(preds: PredictionSet, model=None, model_id: str = "",
                        seed: int = 0, scenario: str = "",
                        k: int = KNN_K) -> DiagnosticsRow:
    """Evaluate the full 12-metric battery on one prediction set.

    `model` is a (params, spec) pair; without it the Jacobian metric
    cannot be computed and an error is raised.
    """
    if model is None or preds.inputs is None:
        raise ValueError("the diagnostics battery needs the model and the "
                         "preprocessed inputs")
    params, spec = model
    mean_m, p10_m = margins(preds)
    tv, pl2, cad, mad = knn_metrics(preds, k=k)
    values = {
        "accuracy": accuracy(preds),
        "nll": nll(preds),
        "brier": brier(preds),
        "ece": ece(preds),
        "margin_mean": mean_m,
        "margin_p10": p10_m,
        "auroc_entropy": auroc_entropy(preds),
        "jacobian_norm": mean_jacobian_norm(params, spec, preds.inputs,
                                            preds.labels),
        "knn_tv_hard": tv,
        "knn_prob_l2": pl2,
        "knn_conf_absdiff": cad,
        "knn_margin_absdiff": mad,
    }
    return DiagnosticsRow(model_id=model_id, seed=seed, scenario=scenario,
                          values=values)
