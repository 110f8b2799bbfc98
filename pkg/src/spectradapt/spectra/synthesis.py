"""Parametric spectrum synthesis with controllable domain shift.

Templates are Gaussian peaks plus an exponential continuum on a uniform
energy grid; domain shift rescales gain and resolution, tilts detection
efficiency, and reweights class priors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..seeding import item_stream

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
SIMPLEX_TOL = 1e-9


def check_simplex(v: np.ndarray, tol: float = SIMPLEX_TOL) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or np.any(v < -tol) or np.any(v > 1 + tol) \
            or abs(v.sum() - 1.0) > tol:
        raise ValueError("vector is not on the probability simplex")
    return v


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform channel grid in keV."""

    n_bins: int = 1024
    e_min: float = 0.0
    e_max: float = 3000.0

    def __post_init__(self):
        if self.n_bins <= 0 or self.e_max <= self.e_min:
            raise ValueError("grid needs n_bins > 0 and e_max > e_min")

    @property
    def bin_width(self) -> float:
        return (self.e_max - self.e_min) / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return self.e_min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def bin_of(self, energy: float) -> int:
        return int(np.clip((energy - self.e_min) // self.bin_width,
                           0, self.n_bins - 1))


@dataclass(frozen=True)
class Spectrum:
    counts: np.ndarray
    live_time: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("counts must be finite and >= 0")
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class LabeledSpectrum:
    spectrum: Spectrum
    label: np.ndarray
    domain_tag: str = "source"

    def __post_init__(self):
        object.__setattr__(self, "label", check_simplex(self.label))
        if self.domain_tag not in ("source", "target"):
            raise ValueError("domain_tag must be 'source' or 'target'")


@dataclass(frozen=True)
class IsotopeTemplate:
    class_id: int
    peaks: tuple[tuple[float, float, float], ...]  # (centroid keV, intensity, fwhm keV)
    continuum: tuple[float, float]                 # (amplitude, decay per keV)
    grid: EnergyGrid
    expected_shape: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.expected_shape is not None:
            s = np.asarray(self.expected_shape, dtype=np.float64)
            if np.any(s < 0) or abs(s.sum() - 1.0) > SIMPLEX_TOL:
                raise ValueError("expected_shape must be >= 0 and sum to 1")
            object.__setattr__(self, "expected_shape", s)


@dataclass(frozen=True)
class ShiftConfig:
    """One knob per named shift mechanism; all 1.0 / 0.0 means no shift."""

    gain_factor: float = 1.0
    resolution_scale: float = 1.0
    efficiency_tilt: float = 0.0
    background_scale: float = 1.0
    prior_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if min(self.gain_factor, self.resolution_scale,
               self.background_scale) <= 0:
            raise ValueError("gain, resolution and background scales must be > 0")
        if self.prior_weights is not None:
            w = np.asarray(self.prior_weights, dtype=np.float64)
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("prior_weights must be >= 0 with positive sum")
            object.__setattr__(self, "prior_weights",
                               tuple(float(x) for x in w / w.sum()))

    def priors(self, k: int) -> np.ndarray:
        if self.prior_weights is None:
            return np.full(k, 1.0 / k)
        w = np.asarray(self.prior_weights, dtype=np.float64)
        if w.size != k:
            raise ValueError(f"prior_weights length {w.size} != K {k}")
        return w


def _raw_shape(peaks, continuum, grid: EnergyGrid) -> np.ndarray:
    e = grid.centers
    shape = np.zeros(grid.n_bins)
    for centroid, intensity, fwhm in peaks:
        if intensity < 0 or fwhm <= 0:
            raise ValueError("peak intensity must be >= 0 and fwhm > 0")
        sigma = fwhm * FWHM_TO_SIGMA
        shape += intensity * np.exp(-0.5 * ((e - centroid) / sigma) ** 2)
    amplitude, decay = continuum
    if amplitude < 0:
        raise ValueError("continuum amplitude must be >= 0")
    if amplitude > 0:
        shape += amplitude * np.exp(-decay * e)
    return shape


def synth_template(class_id: int, peaks, continuum, grid: EnergyGrid
                   ) -> IsotopeTemplate:
    """Evaluate Gaussian peaks plus exponential continuum at bin centers and
    normalize to unit mass."""
    peaks = tuple((float(c), float(i), float(f)) for c, i, f in peaks)
    continuum = (float(continuum[0]), float(continuum[1]))
    for centroid, _, _ in peaks:
        if not grid.e_min <= centroid <= grid.e_max:
            raise ValueError(f"peak at {centroid} keV outside grid")
    if not peaks and continuum[0] == 0:
        raise ValueError("degenerate template: no peaks and no continuum")
    shape = _raw_shape(peaks, continuum, grid)
    total = shape.sum()
    if total <= 0:
        raise ValueError("degenerate template: all-zero shape")
    return IsotopeTemplate(class_id=class_id, peaks=peaks, continuum=continuum,
                           grid=grid, expected_shape=shape / total)


def apply_domain_shift(template: IsotopeTemplate, shift: ShiftConfig
                       ) -> IsotopeTemplate:
    """Rescale peak centroids by the gain factor and widths by the
    resolution scale, then tilt efficiency as shape * e^tilt (renormalized).

    The class identity never changes. Raises if every peak is carried off
    the grid.
    """
    grid = template.grid
    peaks = tuple((c * shift.gain_factor, i, f * shift.resolution_scale)
                  for c, i, f in template.peaks)
    if template.peaks and all(not grid.e_min <= c <= grid.e_max
                              for c, _, _ in peaks):
        raise ValueError("template off-grid: all shifted peaks left the grid")
    shape = _raw_shape(peaks, template.continuum, grid)
    total = shape.sum()
    if total <= 0:
        raise ValueError("template off-grid: shifted shape is all zero")
    shape = shape / total
    if shift.efficiency_tilt != 0.0:
        tilt = grid.centers ** shift.efficiency_tilt
        shape = shape * tilt
        shape = shape / shape.sum()
    return IsotopeTemplate(class_id=template.class_id, peaks=peaks,
                           continuum=template.continuum, grid=grid,
                           expected_shape=shape)


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return item_stream(int(seed), 0)


def expected_mixture(templates, mixing: np.ndarray, background, snr: float,
                     total_counts: float) -> np.ndarray:
    """Expected counts of a mixed, background-added spectrum.

    The background fraction is beta = 1 / (1 + snr); snr may be inf for a
    background-free spectrum.
    """
    if snr <= 0:
        raise ValueError("snr must be > 0 (use inf for no background)")
    if total_counts <= 0:
        raise ValueError("total_counts must be > 0")
    mixing = check_simplex(mixing)
    if len(mixing) != len(templates):
        raise ValueError("mixing length must match template count")
    beta = 1.0 / (1.0 + snr)
    signal = np.zeros_like(templates[0].expected_shape)
    for w, tpl in zip(mixing, templates):
        if w > 0:
            signal = signal + w * tpl.expected_shape
    if beta > 0:
        if background is None:
            raise ValueError("background shape required when snr is finite")
        bg = np.asarray(background, dtype=np.float64)
        bg = bg / bg.sum()
        expected = total_counts * ((1.0 - beta) * signal + beta * bg)
    else:
        expected = total_counts * signal
    return expected


def mix_and_sample(templates, mixing, background, snr: float,
                   total_counts: float, seed,
                   domain_tag: str = "source") -> LabeledSpectrum:
    """Poisson-draw one labeled spectrum from the expected mixture."""
    rng = _as_generator(seed)
    expected = expected_mixture(templates, np.asarray(mixing, float),
                                background, snr, total_counts)
    counts = rng.poisson(expected).astype(np.float64)
    return LabeledSpectrum(spectrum=Spectrum(counts=counts),
                           label=np.asarray(mixing, dtype=np.float64),
                           domain_tag=domain_tag)


def poisson_resample(spectrum: Spectrum, effective_counts: float, seed
                     ) -> Spectrum:
    """Redraw a spectrum as Poisson(effective_counts * normalized shape).

    A zero-sum input is returned unchanged; used as the stochastic view
    generator for consistency and contrastive training.
    """
    if effective_counts <= 0:
        raise ValueError("effective_counts must be > 0")
    total = spectrum.counts.sum()
    if total == 0:
        return spectrum
    rng = _as_generator(seed)
    rate = effective_counts * spectrum.counts / total
    return Spectrum(counts=rng.poisson(rate).astype(np.float64),
                    live_time=spectrum.live_time)


def exponential_background(grid: EnergyGrid, decay: float = 1.5e-3
                           ) -> np.ndarray:
    """Shared background shape: a featureless decaying continuum."""
    shape = np.exp(-decay * grid.centers)
    return shape / shape.sum()


def random_template_bank(n_classes: int, grid: EnergyGrid, seed: int,
                         peaks_range: tuple[int, int] = (1, 3),
                         fwhm_range: tuple[float, float] = (40.0, 90.0)
                         ) -> list[IsotopeTemplate]:
    """Deterministic bank of synthetic isotope templates.

    Each class gets 1-3 Gaussian peaks in the central grid region plus a
    weak continuum, with centroids spread so classes overlap but stay
    distinguishable.
    """
    rng = item_stream(seed, 0)
    span = grid.e_max - grid.e_min
    templates = []
    for cid in range(n_classes):
        n_peaks = int(rng.integers(peaks_range[0], peaks_range[1] + 1))
        peaks = []
        for _ in range(n_peaks):
            centroid = grid.e_min + span * (0.08 + 0.84 * rng.random())
            intensity = 0.3 + rng.random()
            fwhm = fwhm_range[0] + (fwhm_range[1] - fwhm_range[0]) * rng.random()
            peaks.append((centroid, intensity, fwhm))
        continuum = (0.15 + 0.2 * rng.random(), 10 ** rng.uniform(-3.3, -2.7))
        templates.append(synth_template(cid, peaks, continuum, grid))
    return templates


def identity_shift() -> ShiftConfig:
    return ShiftConfig()


def shifted(shift: ShiftConfig, **updates) -> ShiftConfig:
    return replace(shift, **updates)
