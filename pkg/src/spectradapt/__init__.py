"""Desk-scale unsupervised domain adaptation for 1-d spectrum classifiers:
synthetic data with controllable shift, a small autodiff core with three
architecture families, seven adaptation objectives, domain-gap statistics,
a diagnostics battery, and sampled-Shapley attributions."""

__version__ = "0.1.0"

from . import diagnostics, explain, gapmetrics, runner, spectra, tensornn, uda

__all__ = ["diagnostics", "explain", "gapmetrics", "runner", "spectra",
           "tensornn", "uda", "__version__"]
