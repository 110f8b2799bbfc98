"""Declarative experiment configuration: one JSON file fully determines
every emitted byte (modulo nothing -- outputs carry no timestamps)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..spectra.synthesis import EnergyGrid, ShiftConfig
from ..tensornn.network import ConfigError, NetworkSpec
from ..uda.drivers import METHODS, UdaHyper

DEFAULT_SEEDS = tuple(range(10))


class OutputExists(ConfigError):
    """Refusing to overwrite an existing output without --force."""


@dataclass(frozen=True)
class SplitSizes:
    train: int = 2000
    val: int = 500
    test: int = 1000

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise ConfigError("split sizes must be positive")


@dataclass
class ExperimentConfig:
    name: str
    out_dir: Path
    grid: EnergyGrid = field(default_factory=EnergyGrid)
    n_classes: int = 8
    template_seed: int = 20
    data_seed: int = 1
    label_mode: str = "single"
    snr: float = 5.0
    counts_range: tuple[float, float] = (2e3, 2e4)
    source_sizes: SplitSizes = field(default_factory=SplitSizes)
    target_sizes: SplitSizes = field(default_factory=SplitSizes)
    source_shift: ShiftConfig = field(default_factory=ShiftConfig)
    target_shift: ShiftConfig = field(default_factory=ShiftConfig)
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec(
        family="mlp"))
    train: UdaHyper = field(default_factory=lambda: UdaHyper(
        method="source_only"))
    uda: dict[str, UdaHyper] = field(default_factory=dict)
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        if self.label_mode not in ("single", "mixed"):
            raise ConfigError("label_mode must be 'single' or 'mixed'")
        if self.snr <= 0:
            raise ConfigError("snr must be > 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.network.n_classes != self.n_classes:
            raise ConfigError("network.n_classes must match n_classes")
        for method in self.uda:
            if method not in METHODS:
                raise ConfigError(f"unknown UDA method {method!r}")

    # -- paths ---------------------------------------------------------------
    def data_dir(self, domain: str, split: str) -> Path:
        return Path(self.out_dir) / "data" / domain / split

    def run_dir(self, arch: str, method: str, seed: int) -> Path:
        return Path(self.out_dir) / "runs" / arch / method / f"seed{seed}"

    def eval_dir(self) -> Path:
        return Path(self.out_dir) / "eval"

    def report_dir(self) -> Path:
        return Path(self.out_dir) / "report"

    def hyper_for(self, method: str) -> UdaHyper:
        base = self.uda.get(method)
        if base is None:
            base = UdaHyper(method=method)
        return base

    def network_for(self, arch: str) -> NetworkSpec:
        if arch == self.network.family:
            return self.network
        return _network_from_dict({**_network_to_dict(self.network),
                                   "family": arch})

    @property
    def eval_metric(self) -> str:
        return "ape" if self.label_mode == "mixed" else "accuracy"


# -- JSON (de)serialization ---------------------------------------------------

def _network_to_dict(spec: NetworkSpec) -> dict:
    return {
        "family": spec.family, "n_bins": spec.n_bins,
        "n_classes": spec.n_classes, "dense_widths": list(spec.dense_widths),
        "conv_filters": list(spec.conv_filters),
        "conv_kernel": spec.conv_kernel, "embed_dim": spec.embed_dim,
        "n_blocks": spec.n_blocks, "n_heads": spec.n_heads,
        "ff_dim": spec.ff_dim, "patch_size": spec.patch_size,
        "embedder_hidden": spec.embedder_hidden, "dropout": spec.dropout,
    }


def _network_from_dict(d: dict) -> NetworkSpec:
    d = dict(d)
    for key in ("dense_widths", "conv_filters"):
        if key in d:
            d[key] = tuple(d[key])
    return NetworkSpec(**d)


def _hyper_to_dict(h: UdaHyper) -> dict:
    d = dict(vars(h))
    d["projection_widths"] = list(h.projection_widths)
    d["disc_widths"] = list(h.disc_widths)
    return d


def _hyper_from_dict(d: dict) -> UdaHyper:
    d = dict(d)
    for key in ("projection_widths", "disc_widths"):
        if key in d:
            d[key] = tuple(d[key])
    return UdaHyper(**d)


def _shift_to_dict(s: ShiftConfig) -> dict:
    return {"gain_factor": s.gain_factor,
            "resolution_scale": s.resolution_scale,
            "efficiency_tilt": s.efficiency_tilt,
            "background_scale": s.background_scale,
            "prior_weights": (list(s.prior_weights)
                              if s.prior_weights is not None else None)}


def _shift_from_dict(d: dict) -> ShiftConfig:
    d = dict(d)
    if d.get("prior_weights") is not None:
        d["prior_weights"] = tuple(d["prior_weights"])
    return ShiftConfig(**d)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "name": cfg.name,
        "out_dir": str(cfg.out_dir),
        "grid": {"n_bins": cfg.grid.n_bins, "e_min": cfg.grid.e_min,
                 "e_max": cfg.grid.e_max},
        "n_classes": cfg.n_classes,
        "template_seed": cfg.template_seed,
        "data_seed": cfg.data_seed,
        "label_mode": cfg.label_mode,
        "snr": cfg.snr,
        "counts_range": list(cfg.counts_range),
        "source_sizes": vars(cfg.source_sizes),
        "target_sizes": vars(cfg.target_sizes),
        "source_shift": _shift_to_dict(cfg.source_shift),
        "target_shift": _shift_to_dict(cfg.target_shift),
        "network": _network_to_dict(cfg.network),
        "train": _hyper_to_dict(cfg.train),
        "uda": {m: _hyper_to_dict(h) for m, h in cfg.uda.items()},
        "seeds": list(cfg.seeds),
    }


def config_from_dict(d: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            name=d["name"],
            out_dir=Path(d["out_dir"]),
            grid=EnergyGrid(**d.get("grid", {})),
            n_classes=d.get("n_classes", 8),
            template_seed=d.get("template_seed", 20),
            data_seed=d.get("data_seed", 1),
            label_mode=d.get("label_mode", "single"),
            snr=d.get("snr", 5.0),
            counts_range=tuple(d.get("counts_range", (2e3, 2e4))),
            source_sizes=SplitSizes(**d.get("source_sizes", {})),
            target_sizes=SplitSizes(**d.get("target_sizes", {})),
            source_shift=_shift_from_dict(d.get("source_shift", {})),
            target_shift=_shift_from_dict(d.get("target_shift", {})),
            network=_network_from_dict(d.get("network", {"family": "mlp"})),
            train=_hyper_from_dict(d.get("train", {})),
            uda={m: _hyper_from_dict({**h, "method": m})
                 for m, h in d.get("uda", {}).items()},
            seeds=tuple(d.get("seeds", DEFAULT_SEEDS)),
        )
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid experiment config: {e}") from e


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = config_from_dict(raw)
    if cfg.network.n_bins != cfg.grid.n_bins:
        raise ConfigError("network.n_bins must match grid.n_bins")
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1,
                                     sort_keys=True))
