"""Experiment orchestration behind the CLI subcommands."""
from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..diagnostics import (DiagnosticsRow, METRIC_NAMES, PredictionSet,
                           accuracy, ape_score, compute_diagnostics,
                           wilcoxon_signed_rank)
from ..explain import RegionPartition, sampled_shapley
from ..gapmetrics import gap_report
from ..seeding import stream, subseed
from ..spectra.dataset import (Dataset, generate_dataset, generate_rows,
                               load_dataset, save_dataset)
from ..spectra.synthesis import exponential_background, random_template_bank
from ..spectra.transforms import preprocess_batch
from ..tensornn.checkpoint import load_params, save_params
from ..tensornn.network import ConfigError, build_network
from ..uda.drivers import (AdaptData, AdaptResult, UdaHyper, adapt,
                           eval_features_probs, pretrain_source)
from .config import ExperimentConfig, OutputExists, _hyper_to_dict

WORKERS_ENV = "SPECTRADAPT_WORKERS"

SPLITS = ("train", "val", "test")
DOMAINS = ("source", "target")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _templates(cfg: ExperimentConfig):
    return random_template_bank(cfg.n_classes, cfg.grid, cfg.template_seed)


def _background(cfg: ExperimentConfig) -> np.ndarray:
    return exponential_background(cfg.grid)


def _gen_chunk(args):
    (templates, start, stop, seed, shift, label_mode, counts_range, snr,
     background) = args
    return generate_rows(templates, start, stop, seed, shift, label_mode,
                         counts_range, snr, background)


def _generate(cfg: ExperimentConfig, domain: str, split: str,
              n_items: int, workers: int) -> Dataset:
    shift = cfg.source_shift if domain == "source" else cfg.target_shift
    seed = subseed(cfg.data_seed, domain, split)
    kwargs = dict(shift=shift, label_mode=cfg.label_mode,
                  counts_range=cfg.counts_range, snr=cfg.snr,
                  background=_background(cfg), domain_tag=domain)
    templates = _templates(cfg)
    if workers <= 1 or n_items < 2 * workers:
        return generate_dataset(templates, n_items, seed, **kwargs)
    bounds = np.linspace(0, n_items, workers + 1).astype(int)
    jobs = [(templates, int(lo), int(hi), seed, shift, cfg.label_mode,
             cfg.counts_range, cfg.snr, _background(cfg))
            for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_gen_chunk, jobs))
    counts = np.vstack([p[0] for p in parts])
    labels = np.vstack([p[1] for p in parts])
    return Dataset(counts=counts, labels=labels, grid=cfg.grid, seed=seed,
                   n_classes=cfg.n_classes, domain_tag=domain, shift=shift,
                   label_mode=cfg.label_mode)


def cmd_synth(cfg: ExperimentConfig, force: bool = False) -> dict[str, Path]:
    """Write train/val/test datasets for both domains.

    Target train labels stay in the files (the loader strips them for
    adaptation consumers) and test labels are retained for evaluation.
    """
    workers = worker_count()
    written = {}
    for domain in DOMAINS:
        sizes = cfg.source_sizes if domain == "source" else cfg.target_sizes
        for split in SPLITS:
            out = cfg.data_dir(domain, split)
            if out.exists() and any(out.iterdir()):
                if not force:
                    raise OutputExists(f"{out} exists; pass --force to "
                                       "overwrite")
            ds = _generate(cfg, domain, split, getattr(sizes, split), workers)
            save_dataset(ds, out)
            written[f"{domain}/{split}"] = out
    return written


def _load_adapt_data(cfg: ExperimentConfig, labeled_target_val: bool = False
                     ) -> AdaptData:
    return AdaptData(
        src_train=load_dataset(cfg.data_dir("source", "train")),
        tgt_train=load_dataset(cfg.data_dir("target", "train"),
                               unlabeled=True),
        src_val=load_dataset(cfg.data_dir("source", "val")),
        tgt_val=load_dataset(cfg.data_dir("target", "val"), unlabeled=True),
        tgt_val_labeled=(load_dataset(cfg.data_dir("target", "val"))
                         if labeled_target_val else None),
    )


def _write_run(run_dir: Path, result: AdaptResult, force: bool) -> None:
    if run_dir.exists() and any(run_dir.iterdir()) and not force:
        raise OutputExists(f"{run_dir} exists; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    save_params(result.params, run_dir)
    (run_dir / "runlog.json").write_text(
        json.dumps(result.log_dict(), indent=1, sort_keys=True))


def cmd_pretrain(cfg: ExperimentConfig, arch: str, seed: int,
                 force: bool = False) -> Path:
    """Source-only supervised pretraining with validation-loss selection."""
    spec = cfg.network_for(arch)
    data = _load_adapt_data(cfg)
    params, _ = build_network(spec, seed)
    hyper = replace(cfg.train, method="source_only")
    result = pretrain_source(spec, params, data, hyper, seed)
    run_dir = cfg.run_dir(arch, "source_only", seed)
    _write_run(run_dir, result, force)
    return run_dir


def cmd_adapt(cfg: ExperimentConfig, method: str, arch: str, seed: int,
              force: bool = False,
              labeled_selection: bool = False) -> Path:
    """Adapt the paired source-only checkpoint with one UDA method.

    Target train labels are structurally unreadable here: the dataset is
    loaded through the label-stripped view.
    """
    source_dir = cfg.run_dir(arch, "source_only", seed)
    if not (source_dir / "params.json").exists():
        raise ConfigError(f"missing source-only checkpoint {source_dir}")
    params = load_params(source_dir)
    run_dir = cfg.run_dir(arch, method, seed)
    if method == "none":
        result = AdaptResult(params=params, best_epoch=0, method="none")
        _write_run(run_dir, result, force)
        return run_dir
    spec = cfg.network_for(arch)
    hyper = cfg.hyper_for(method)
    if labeled_selection:
        hyper = replace(hyper, selection="labeled")
    data = _load_adapt_data(cfg, labeled_target_val=labeled_selection)
    result = adapt(method, spec, params, data, hyper, seed)
    _write_run(run_dir, result, force)
    return run_dir


# -- random hyperparameter search ---------------------------------------------

SEARCH_SPACES: dict[str, dict[str, tuple]] = {
    "source_only": {
        "lr": ("log", 1e-5, 2e-3),
        "batch_size": ("choice", (32, 64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
    },
    "dan": {
        "lr": ("log", 1e-7, 1e-3),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "tradeoff": ("log", 1e-1, 1e4),
        "mmd_bandwidth": ("log", 1e-1, 1e2),
        "mmd_kernels": ("choice", (3, 5, 7, 9, 11, 13, 15)),
    },
    "coral": {
        "lr": ("log", 1e-7, 1e-3),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "tradeoff": ("log", 1e-1, 1e10),
    },
    "dann": {
        "lr": ("log", 1e-8, 1e-2),
        "disc_lr": ("log", 1e-8, 1e-2),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "kappa": ("uniform", 0.0, 1.0),
        "disc_widths": ("choice", ((64,), (256,), (1024,), (1024, 512))),
    },
    "adda": {
        "lr": ("log", 1e-8, 1e-2),
        "disc_lr": ("log", 1e-8, 1e-2),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "disc_widths": ("choice", ((512,), (1024,), (2048, 1024))),
    },
    "deepjdot": {
        "lr": ("log", 1e-7, 1e-3),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "tradeoff": ("log", 1e-2, 1e2),
        "sinkhorn_epsilon": ("log", 1e-2, 1e1),
        "sinkhorn_iterations": ("int", 5, 30),
        "jdot_alpha": ("log", 1e-2, 1e1),
        "jdot_beta": ("uniform", 0.0, 2.0),
    },
    "mean_teacher": {
        "lr": ("log", 1e-7, 1e-3),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "tradeoff": ("log", 1e-2, 1e3),
        "ema_decay": ("uniform", 0.95, 0.999),
        "effective_counts": ("log", 1e2, 5e4),
    },
    "simclr": {
        "lr": ("log", 1e-7, 1e-3),
        "batch_size": ("choice", (64, 128, 256, 512)),
        "weight_decay": ("log", 1e-7, 1e-3),
        "dropout": ("uniform", 0.0, 0.4),
        "tradeoff": ("log", 1e-2, 1e3),
        "temperature": ("log", 1e-2, 0.5),
        "projection_widths": ("choice", ((64,), (128,), (256,), (128, 64))),
        "effective_counts": ("log", 1e2, 1e5),
    },
}


def _sample_space(space: dict[str, tuple], rng: np.random.Generator) -> dict:
    out = {}
    for name, rule in space.items():
        kind = rule[0]
        if kind == "log":
            out[name] = float(np.exp(rng.uniform(np.log(rule[1]),
                                                 np.log(rule[2]))))
        elif kind == "uniform":
            out[name] = float(rng.uniform(rule[1], rule[2]))
        elif kind == "int":
            out[name] = int(rng.integers(rule[1], rule[2] + 1))
        elif kind == "choice":
            out[name] = rule[1][int(rng.integers(len(rule[1])))]
        else:
            raise ConfigError(f"unknown search rule {kind!r}")
    return out


def cmd_search(cfg: ExperimentConfig, method: str, arch: str, trials: int,
               seed: int = 0, epochs: int | None = None,
               force: bool = False) -> tuple[UdaHyper, Path]:
    """Random search over the method's space; selects the trial with the
    lowest validation criterion."""
    if method not in SEARCH_SPACES:
        raise ConfigError(f"no search space for method {method!r}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    spec = cfg.network_for(arch)
    data = _load_adapt_data(cfg)
    base = cfg.hyper_for(method) if method != "source_only" else cfg.train
    if epochs is not None:
        base = replace(base, epochs=epochs)
    rows = []
    best = None
    for trial in range(trials):
        rng = stream(seed, "search", method, arch, trial)
        sampled = _sample_space(SEARCH_SPACES[method], rng)
        dropout = sampled.pop("dropout", None)
        trial_spec = spec if dropout is None else replace(spec,
                                                          dropout=dropout)
        hyper = replace(base, method=method if method != "source_only"
                        else "source_only", **sampled)
        if method == "source_only":
            params, _ = build_network(trial_spec, seed)
            result = pretrain_source(trial_spec, params, data, hyper, seed)
        else:
            source_dir = cfg.run_dir(arch, "source_only", seed)
            if not (source_dir / "params.json").exists():
                raise ConfigError(f"missing source-only checkpoint "
                                  f"{source_dir}")
            result = adapt(method, trial_spec, load_params(source_dir), data,
                           hyper, seed)
        criterion = min(r.val_criterion for r in result.history) \
            if result.history else float("inf")
        rows.append({"trial": trial, "criterion": criterion,
                     "dropout": dropout, **sampled})
        if best is None or criterion < best[0]:
            best = (criterion, hyper, dropout)
    out_dir = Path(cfg.out_dir) / "search"
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{method}_{arch}.json"
    if out_path.exists() and not force:
        raise OutputExists(f"{out_path} exists; pass --force to overwrite")
    payload = {"method": method, "arch": arch, "criterion": best[0],
               "dropout": best[2], "hyper": _hyper_to_dict(best[1]),
               "trials": rows}
    out_path.write_text(json.dumps(payload, indent=1, sort_keys=True,
                                   default=str))
    return best[1], out_path


# -- measurement commands ------------------------------------------------------

def cmd_gap(cfg: ExperimentConfig, arch: str | None = None,
            method: str = "source_only", seed: int = 0,
            bootstrap: int = 200, permutations: int = 199,
            force: bool = False) -> Path:
    """Gap report between source and target test sets; include the
    feature-space probe when a checkpoint is available."""
    ds = load_dataset(cfg.data_dir("source", "test"))
    dt = load_dataset(cfg.data_dir("target", "test"))
    model = None
    if arch is not None:
        run_dir = cfg.run_dir(arch, method, seed)
        if not (run_dir / "params.json").exists():
            raise ConfigError(f"missing checkpoint {run_dir}")
        model = (load_params(run_dir), cfg.network_for(arch))
    report = gap_report(ds, dt, model=model, b=bootstrap,
                        permutations=permutations, seed=seed)
    out_dir = Path(cfg.out_dir) / "gap"
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{arch}_{method}_seed{seed}" if arch else "inputs"
    json_path = out_dir / f"gap_{tag}.json"
    if json_path.exists() and not force:
        raise OutputExists(f"{json_path} exists; pass --force to overwrite")
    json_path.write_text(json.dumps(report.to_dict(), indent=1,
                                    sort_keys=True))
    csv_path = out_dir / f"gap_{tag}.csv"
    d = report.to_dict()
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["metric", "value", "ci_lo", "ci_hi", "p_value"]
        writer.writerow(header)
        for name in ("auroc_inputs", "auroc_features", "mmd2", "r_ratio"):
            row = d[name]
            if row is None:
                continue
            writer.writerow([name, row["value"], row["ci"][0], row["ci"][1],
                             row["p_value"]])
    return json_path


def _predictions(cfg: ExperimentConfig, arch: str, method: str, seed: int,
                 dataset: Dataset) -> PredictionSet:
    params = load_params(cfg.run_dir(arch, method, seed))
    spec = cfg.network_for(arch)
    x = preprocess_batch(dataset.counts)
    feats, probs = eval_features_probs(params, spec, x)
    return PredictionSet(probs=probs, labels=dataset.labels, inputs=x,
                         features=feats)


def _available_runs(cfg: ExperimentConfig):
    root = Path(cfg.out_dir) / "runs"
    if not root.is_dir():
        return
    for arch_dir in sorted(root.iterdir()):
        for method_dir in sorted(arch_dir.iterdir()):
            for seed_dir in sorted(method_dir.iterdir()):
                if (seed_dir / "params.json").exists():
                    yield (arch_dir.name, method_dir.name,
                           int(seed_dir.name.removeprefix("seed")))


def cmd_eval(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Evaluate every checkpoint on the target test set: a score row and a
    diagnostics row per (arch x method x seed), plus two-sided Wilcoxon
    comparisons against the paired source-only models."""
    test = load_dataset(cfg.data_dir("target", "test"))
    eval_dir = cfg.eval_dir()
    scores_path = eval_dir / "scores.csv"
    if scores_path.exists() and not force:
        raise OutputExists(f"{scores_path} exists; pass --force to overwrite")
    eval_dir.mkdir(parents=True, exist_ok=True)
    spec_cache: dict[str, object] = {}
    score_rows = []
    diag_rows: list[DiagnosticsRow] = []
    for arch, method, seed in _available_runs(cfg):
        preds = _predictions(cfg, arch, method, seed, test)
        score = ape_score(preds) if cfg.eval_metric == "ape" \
            else accuracy(preds)
        score_rows.append((arch, method, seed, cfg.eval_metric, score))
        spec = spec_cache.setdefault(arch, cfg.network_for(arch))
        params = load_params(cfg.run_dir(arch, method, seed))
        try:
            diag_rows.append(compute_diagnostics(
                preds, model=(params, spec), model_id=f"{arch}/{method}",
                seed=seed, scenario=cfg.name))
        except ValueError as e:
            warnings.warn(f"diagnostics skipped for {arch}/{method}/seed"
                          f"{seed}: {e}")
    with scores_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arch", "method", "seed", "metric", "score"])
        writer.writerows(score_rows)
    diag_path = eval_dir / "diagnostics.csv"
    with diag_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "seed", "scenario", *METRIC_NAMES])
        for row in diag_rows:
            writer.writerow([row.model_id, row.seed, row.scenario,
                             *row.as_list()])
    _write_metric_comparison(cfg, diag_rows, eval_dir)
    return scores_path


def _write_metric_comparison(cfg: ExperimentConfig,
                             rows: list[DiagnosticsRow],
                             eval_dir: Path) -> None:
    by_model: dict[str, dict[int, DiagnosticsRow]] = {}
    for row in rows:
        by_model.setdefault(row.model_id, {})[row.seed] = row
    lines = ["# Diagnostic comparison vs source-only", ""]
    for model_id, seeds in sorted(by_model.items()):
        arch, method = model_id.split("/")
        if method == "source_only":
            continue
        base = by_model.get(f"{arch}/source_only", {})
        shared = sorted(set(seeds) & set(base))
        if len(shared) < 5:
            lines.append(f"## {model_id}: fewer than 5 paired seeds, skipped")
            continue
        lines.append(f"## {model_id} (n = {len(shared)} paired seeds)")
        lines.append("")
        lines.append("| metric | source-only | " + method + " | p (two-sided) |")
        lines.append("|---|---|---|---|")
        for name in METRIC_NAMES:
            a = np.array([seeds[s].values[name] for s in shared])
            b = np.array([base[s].values[name] for s in shared])
            try:
                p = f"{wilcoxon_signed_rank(a, b, 'two_sided'):.4f}"
            except ValueError:
                p = "degenerate"
            lines.append(f"| {name} | {b.mean():.4f} ± {b.std(ddof=1):.4f} "
                         f"| {a.mean():.4f} ± {a.std(ddof=1):.4f} | {p} |")
        lines.append("")
    (eval_dir / "comparison.md").write_text("\n".join(lines))


def cmd_explain(cfg: ExperimentConfig, arch: str, method: str, seed: int,
                item: int, class_id: int | None = None,
                n_regions: int = 32, n_samples: int = 16,
                force: bool = False) -> Path:
    """Shapley attributions for one target test spectrum, as CSV."""
    test = load_dataset(cfg.data_dir("target", "test"))
    if not 0 <= item < len(test):
        raise ConfigError(f"item index {item} out of range")
    params = load_params(cfg.run_dir(arch, method, seed))
    spec = cfg.network_for(arch)

    def predict(batch):
        _, probs = eval_features_probs(params, spec, preprocess_batch(batch))
        return probs

    spectrum = test[item].spectrum
    target_class = class_id if class_id is not None \
        else int(np.argmax(test.labels[item]))
    partition = RegionPartition.equal_width(cfg.grid.n_bins, n_regions)
    attr = sampled_shapley(predict, spectrum, target_class, partition,
                           n_samples=n_samples, seed=seed)
    out_dir = Path(cfg.out_dir) / "explain"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{arch}_{method}_seed{seed}_item{item}.csv"
    if path.exists() and not force:
        raise OutputExists(f"{path} exists; pass --force to overwrite")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_start", "region_stop", "attribution",
                         "baseline_prob", "full_prob", "target_class"])
        for (start, stop), value in zip(partition.ranges, attr.values):
            writer.writerow([start, stop, value, attr.baseline_prob,
                             attr.full_prob, attr.target_class])
    return path
