"""Dataset assembly and the on-disk format (JSON manifest + flat binary)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..seeding import item_stream
from .synthesis import (EnergyGrid, LabeledSpectrum, ShiftConfig, Spectrum,
                        apply_domain_shift, expected_mixture)

MANIFEST_NAME = "manifest.json"
BINARY_NAME = "data.bin"

# drawing order per item is fixed: label, total counts, Poisson counts
MAX_MIX_CLASSES = 4
DIRICHLET_ALPHA = 1.0


class LabelAccessError(RuntimeError):
    """Raised when an adaptation consumer touches withheld labels."""


@dataclass
class Dataset:
    """Stacked spectra of one domain; deterministic under (config, seed)."""

    counts: np.ndarray            # [n x n_bins] float64
    labels: np.ndarray            # [n x K] simplex rows
    grid: EnergyGrid
    seed: int
    n_classes: int
    domain_tag: str
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    label_mode: str = "single"

    def __post_init__(self):
        if self.counts.shape[0] != self.labels.shape[0]:
            raise ValueError("counts and labels row counts differ")
        if self.counts.shape[1] != self.grid.n_bins:
            raise ValueError("counts width must equal grid bins")
        if self.labels.shape[1] != self.n_classes:
            raise ValueError("labels width must equal class count")

    def __len__(self) -> int:
        return self.counts.shape[0]

    def __getitem__(self, i: int) -> LabeledSpectrum:
        return LabeledSpectrum(spectrum=Spectrum(counts=self.counts[i]),
                               label=self.labels[i], domain_tag=self.domain_tag)

    @property
    def items(self) -> list[LabeledSpectrum]:
        return [self[i] for i in range(len(self))]

    @property
    def class_ids(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(counts=self.counts, grid=self.grid,
                                domain_tag=self.domain_tag)


@dataclass
class UnlabeledDataset:
    """Label-stripped view handed to adaptation consumers."""

    counts: np.ndarray
    grid: EnergyGrid
    domain_tag: str

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def labels(self):
        raise LabelAccessError("target train labels are withheld from "
                               "adaptation consumers")

    @property
    def class_ids(self):
        raise LabelAccessError("target train labels are withheld from "
                               "adaptation consumers")


def _draw_label(rng: np.random.Generator, k: int, priors: np.ndarray,
                label_mode: str) -> np.ndarray:
    if label_mode == "single":
        label = np.zeros(k)
        label[rng.choice(k, p=priors)] = 1.0
        return label
    if label_mode == "mixed":
        size = int(rng.integers(1, min(MAX_MIX_CLASSES, k) + 1))
        classes = rng.choice(k, size=size, replace=False, p=priors)
        label = np.zeros(k)
        label[classes] = rng.dirichlet(np.full(size, DIRICHLET_ALPHA))
        return label
    raise ValueError(f"unknown label_mode {label_mode!r}")


def generate_rows(templates, start: int, stop: int, seed: int,
                  shift: ShiftConfig = ShiftConfig(),
                  label_mode: str = "single",
                  counts_range: tuple[float, float] = (2e3, 2e4),
                  snr: float = 5.0,
                  background: np.ndarray | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Generate items [start, stop) of a dataset as (counts, labels) rows.

    Every item derives its own counter-based generator from
    (seed, item index), so any chunking across workers yields identical
    rows.
    """
    grid = templates[0].grid
    k = len(templates)
    shifted_templates = [apply_domain_shift(t, shift) for t in templates]
    priors = shift.priors(k)
    lo, hi = counts_range
    if lo <= 0 or hi < lo:
        raise ValueError("counts_range must satisfy 0 < lo <= hi")
    snr_eff = snr / shift.background_scale
    counts = np.empty((stop - start, grid.n_bins))
    labels = np.empty((stop - start, k))
    for i in range(start, stop):
        rng = item_stream(seed, i)
        label = _draw_label(rng, k, priors, label_mode)
        total = lo if lo == hi else float(np.exp(rng.uniform(np.log(lo),
                                                             np.log(hi))))
        expected = expected_mixture(shifted_templates, label, background,
                                    snr_eff, total)
        counts[i - start] = rng.poisson(expected)
        labels[i - start] = label
    return counts, labels


def generate_dataset(templates, n_items: int, seed: int,
                     shift: ShiftConfig = ShiftConfig(),
                     label_mode: str = "single",
                     counts_range: tuple[float, float] = (2e3, 2e4),
                     snr: float = 5.0,
                     background: np.ndarray | None = None,
                     domain_tag: str = "source") -> Dataset:
    """Generate `n_items` spectra from shifted templates; deterministic
    under (arguments, seed)."""
    counts, labels = generate_rows(templates, 0, n_items, seed, shift,
                                   label_mode, counts_range, snr, background)
    return Dataset(counts=counts, labels=labels, grid=templates[0].grid,
                   seed=seed, n_classes=len(templates),
                   domain_tag=domain_tag, shift=shift, label_mode=label_mode)


# -- on-disk format ----------------------------------------------------------

def _shift_to_dict(shift: ShiftConfig) -> dict:
    d = asdict(shift)
    if d["prior_weights"] is not None:
        d["prior_weights"] = list(d["prior_weights"])
    return d


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    """Write manifest.json plus a float32 little-endian [n x (bins + K)]
    row-major binary of counts then label."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = np.hstack([ds.counts, ds.labels]).astype("<f4")
    blob = rows.tobytes()
    manifest = {
        "format": "spectradapt-dataset-v1",
        "grid": {"n_bins": ds.grid.n_bins, "e_min": ds.grid.e_min,
                 "e_max": ds.grid.e_max},
        "n_classes": ds.n_classes,
        "n_items": len(ds),
        "seed": ds.seed,
        "domain_tag": ds.domain_tag,
        "label_mode": ds.label_mode,
        "shift": _shift_to_dict(ds.shift),
        "binary_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (directory / BINARY_NAME).write_bytes(blob)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(directory: str | Path, unlabeled: bool = False
                 ) -> Dataset | UnlabeledDataset:
    """Load a dataset directory, validating the manifest hash. With
    `unlabeled=True` the labels are never materialized."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    blob = (directory / BINARY_NAME).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["binary_sha256"]:
        raise ValueError(f"binary hash mismatch in {directory}")
    grid = EnergyGrid(**manifest["grid"])
    n, k = manifest["n_items"], manifest["n_classes"]
    rows = np.frombuffer(blob, dtype="<f4").reshape(n, grid.n_bins + k)
    counts = rows[:, :grid.n_bins].astype(np.float64)
    shift_dict = dict(manifest["shift"])
    if shift_dict.get("prior_weights") is not None:
        shift_dict["prior_weights"] = tuple(shift_dict["prior_weights"])
    shift = ShiftConfig(**shift_dict)
    if unlabeled:
        return UnlabeledDataset(counts=counts, grid=grid,
                                domain_tag=manifest["domain_tag"])
    labels = rows[:, grid.n_bins:].astype(np.float64)
    # restore the simplex invariant lost to float32 storage
    labels = labels / labels.sum(axis=1, keepdims=True)
    return Dataset(counts=counts, labels=labels, grid=grid,
                   seed=manifest["seed"], n_classes=k,
                   domain_tag=manifest["domain_tag"], shift=shift,
                   label_mode=manifest["label_mode"])
