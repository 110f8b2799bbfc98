"""Aggregate per-seed scores into the headline comparison tables."""
from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..diagnostics import wilcoxon_signed_rank
from ..tensornn.network import ConfigError
from .config import ExperimentConfig, OutputExists


def _read_scores(path: Path) -> list[tuple[str, str, int, str, float]]:
    rows = []
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["arch"], rec["method"], int(rec["seed"]),
                         rec["metric"], float(rec["score"])))
    return rows


def aggregate_scores(rows) -> dict:
    """Group scores by (arch, method) -> {seed: score}, intersecting seed
    sets that disagree (with a warning)."""
    table: dict[tuple[str, str], dict[int, float]] = defaultdict(dict)
    for arch, method, seed, _metric, score in rows:
        table[(arch, method)][seed] = score
    by_arch: dict[str, set[int]] = {}
    for (arch, _method), seeds in table.items():
        by_arch.setdefault(arch, set(seeds)).intersection_update(seeds)
    for (arch, method), seeds in list(table.items()):
        keep = by_arch[arch]
        if set(seeds) != keep:
            warnings.warn(f"inconsistent seed sets for {arch}/{method}; "
                          "intersecting")
            table[(arch, method)] = {s: v for s, v in seeds.items()
                                     if s in keep}
    return table


def cmd_report(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Per-seed CSV plus a markdown table of mean ± sample std per
    (method x arch), one-sided Wilcoxon p-values vs the paired source-only
    runs, and bold for the best mean of each architecture column."""
    scores_path = cfg.eval_dir() / "scores.csv"
    if not scores_path.exists():
        raise ConfigError(f"no scores at {scores_path}; run eval first")
    rows = _read_scores(scores_path)
    if not rows:
        raise ConfigError("scores.csv is empty")
    metric = rows[0][3]
    table = aggregate_scores(rows)
    report_dir = cfg.report_dir()
    per_seed = report_dir / "per_seed.csv"
    report_md = report_dir / "report.md"
    if report_md.exists() and not force:
        raise OutputExists(f"{report_md} exists; pass --force to overwrite")
    report_dir.mkdir(parents=True, exist_ok=True)
    with per_seed.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arch", "method", "seed", "metric", "score"])
        for (arch, method), seeds in sorted(table.items()):
            for seed, score in sorted(seeds.items()):
                writer.writerow([arch, method, seed, metric, score])

    archs = sorted({arch for arch, _ in table})
    methods = sorted({method for _, method in table})
    if "source_only" in methods:
        methods.remove("source_only")
        methods.insert(0, "source_only")

    def stats(arch, method):
        seeds = table.get((arch, method))
        if not seeds:
            return None
        vals = np.array([seeds[s] for s in sorted(seeds)])
        return vals, sorted(seeds)

    best_mean = {}
    for arch in archs:
        means = {m: stats(arch, m)[0].mean() for m in methods
                 if stats(arch, m) is not None}
        if means:
            best_mean[arch] = max(means.items(), key=lambda kv: kv[1])[0]

    lines = [f"# {cfg.name}: target-domain test {metric}", "",
             "Cell entries are mean ± sample standard deviation across "
             "seeds; p is the one-sided Wilcoxon signed-rank test of the "
             "method improving on its paired source-only runs.", "",
             "| method | " + " | ".join(f"{a} | p" for a in archs) + " |",
             "|" + "---|" * (2 * len(archs) + 1)]
    for method in methods:
        cells = []
        for arch in archs:
            st = stats(arch, method)
            if st is None:
                cells.extend(["n/a", "n/a"])
                continue
            vals, seeds = st
            if len(vals) > 1:
                cell = f"{vals.mean():.4f} ± {vals.std(ddof=1):.4f}"
            else:
                cell = f"{vals.mean():.4f}"
            if best_mean.get(arch) == method:
                cell = f"**{cell}**"
            if method == "source_only":
                cells.extend([cell, ""])
                continue
            base = stats(arch, "source_only")
            if base is None or len(vals) < 5 or len(base[0]) != len(vals):
                cells.extend([cell, "n/a"])
                continue
            try:
                p = wilcoxon_signed_rank(vals, base[0], "greater")
                cells.extend([cell, f"{p:.4g}"])
            except ValueError:
                cells.extend([cell, "degenerate"])
        lines.append(f"| {method} | " + " | ".join(cells) + " |")
    report_md.write_text("\n".join(lines) + "\n")
    return report_md
