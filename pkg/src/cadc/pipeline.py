"""End-to-end experiments: pretrain, compress, train the two-tower model, evaluate.

The ``cmd_*`` functions back the CLI subcommands of the same name and are
usable directly from Python.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PRETRAINED_METHODS, RunConfig
from .dataset import (InteractionDataset, SplitDataset, item_frequency, oversample_tail,
                      parse_interactions, parse_side_features, sample_uniform,
                      split_leave_last_two, undersample_head)
from .evaluation import MetricsReport, evaluate
from .mf import MfConfig, export_embeddings, train_mf, train_mf_mlp
from .storage import load_embeddings, save_embeddings
from .ttnn import IntegrationStrategy, TtnnConfig, build_ttnn, train_ttnn

logger = logging.getLogger(__name__)

METRICS_HEADER = ("method", "dataset", "ratio", "seed", "hr10", "ndcg10", "pretrain_s", "train_s")
TABLE1_METHODS = ("random", "over", "under", "logq", "cadc-mlp", "cadc", "gold-standard")


def load_dataset(config: RunConfig) -> InteractionDataset:
    dataset = parse_interactions(config.ratings, config.format, name=config.dataset_label)
    if config.schema == "movielens" and (config.users or config.items):
        parse_side_features(dataset, config.users, config.items, "movielens")
    else:
        parse_side_features(dataset, schema="none")
    logger.info("loaded %s: %d users, %d items, %d interactions", dataset.name,
                dataset.n_users, dataset.n_items, len(dataset.interactions))
    return dataset


def filtering_fraction(ratio: float) -> float:
    """Convert a full/selected filtering ratio (10 means keep 10%) to a sampling fraction."""
    if ratio < 1:
        raise ValueError(f"filtering ratio must be >= 1, got {ratio}")
    return 1.0 / ratio


def mf_config(config: RunConfig) -> MfConfig:
    return MfConfig(dim=config.emb, epochs=config.mf_epochs, batch_size=config.batch_size,
                    k_neg=config.k_neg, lr=config.mf_lr, seed=config.seed)


def ttnn_config(config: RunConfig) -> TtnnConfig:
    return TtnnConfig(emb=config.emb, tower_hidden=tuple(config.tower_hidden), epochs=config.epochs,
                      batch_size=config.batch_size, k_neg=config.k_neg, lr=config.lr,
                      seed=config.seed)


def _split_digest(split: SplitDataset) -> str:
    h = hashlib.sha256()
    for part in (split.train, split.validation, split.test):
        for col in (part.user, part.item, part.timestamp):
            h.update(np.ascontiguousarray(col, dtype="<i8").tobytes())
    h.update(f"{split.parent.n_users},{split.parent.n_items}".encode())
    return h.hexdigest()[:16]


@dataclass
class Experiment:
    """A loaded dataset, its split and a cache of pretrained tables."""

    config: RunConfig
    dataset: InteractionDataset
    split: SplitDataset
    pretrained: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config: RunConfig) -> "Experiment":
        dataset = load_dataset(config)
        return cls(config, dataset, split_leave_last_two(dataset))

    def cache_dir(self) -> Path:
        return Path(self.config.out) / "cache"

    def pretrain(self, variant: str = "mf"):
        """Pretrained (user, item) tables and the seconds spent producing them.

        Tables are cached in memory and on disk, keyed by the split contents and
        the pretraining hyperparameters; a cache hit reports the original time.
        """
        cfg = mf_config(self.config)
        key_src = json.dumps([variant, _split_digest(self.split), cfg.dim, cfg.epochs,
                              cfg.batch_size, cfg.k_neg, cfg.lr, cfg.seed, list(cfg.mlp_hidden)])
        key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
        if key in self.pretrained:
            return self.pretrained[key]
        prefix = self.cache_dir() / f"{variant}-{key}"
        meta_path = prefix.with_suffix(".json")
        if meta_path.exists():
            tables = load_embeddings(prefix)
            seconds = json.loads(meta_path.read_text())["seconds"]
            logger.info("reusing cached %s embeddings %s", variant, prefix)
        else:
            start = time.perf_counter()
            trainer = train_mf if variant == "mf" else train_mf_mlp
            model = trainer(self.split.train, self.dataset, cfg)
            seconds = time.perf_counter() - start
            tables = export_embeddings(model)
            save_embeddings(tables, prefix)
            meta_path.write_text(json.dumps({"seconds": seconds, "variant": variant, "key_source": key_src}))
        self.pretrained[key] = (tables, seconds)
        return tables, seconds

    def training_subset(self, method: str, fraction: float):
        """The compressed training rows for ``method`` and an optional LogQ vector."""
        seed = self.config.seed
        if method == "gold-standard":
            return self.split.train, None
        subset = sample_uniform(self.split.train, fraction, seed)
        if method == "over":
            subset = oversample_tail(subset, seed)
        elif method == "under":
            subset = undersample_head(subset, seed)
        elif method == "logq":
            return subset, item_frequency(subset, self.dataset.n_items)
        return subset, None

    def run(self, method: str | None = None, fraction: float | None = None,
            strategy: str | None = None) -> MetricsReport:
        cfg = self.config
        method = method or cfg.method
        fraction = 1.0 if method == "gold-standard" else (fraction if fraction is not None else cfg.ratio)
        if method in PRETRAINED_METHODS:
            strategy = strategy or cfg.strategy or "init-frz"
            (user_table, item_table), pretrain_s = self.pretrain("mf" if method == "cadc" else "mf-mlp")
            integration = IntegrationStrategy(strategy, user_table, item_table)
        else:
            integration, pretrain_s = IntegrationStrategy("random"), 0.0
        subset, logq = self.training_subset(method, fraction)
        model = build_ttnn(self.dataset, integration, ttnn_config(cfg))
        model, train_s = train_ttnn(model, subset, self.dataset, ttnn_config(cfg), logq=logq)
        report = evaluate(model, self.split)
        label = method if method not in PRETRAINED_METHODS or integration.kind == "init-frz" \
            else f"{method}:{integration.kind}"
        report.method, report.ratio, report.seed = label, fraction, cfg.seed
        report.pretrain_seconds, report.train_seconds = pretrain_s, train_s
        logger.info("%s ratio=%.4g: HR@10 %.2f NDCG@10 %.2f (%.1fs + %.1fs)", label, fraction,
                    report.hr_at_10, report.ndcg_at_10, pretrain_s, train_s)
        return report


# ---------------------------------------------------------------------------
# reports

def metrics_rows(reports) -> list[list[str]]:
    return [[r.method, r.dataset, f"{r.ratio:.6g}", str(r.seed), f"{r.hr_at_10:.4f}",
             f"{r.ndcg_at_10:.4f}", f"{r.pretrain_seconds:.2f}", f"{r.train_seconds:.2f}"]
            for r in reports]


def write_metrics_csv(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        writer.writerows(metrics_rows(reports))
    return path


def degradation(gold: float, value: float) -> float:
    """Percentage drop of ``value`` relative to the gold standard."""
    return 100.0 * (gold - value) / gold if gold else 0.0


def format_with_drop(value: float, gold: float) -> str:
    return f"{value:.2f} ({degradation(gold, value):.1f}%)"


def format_time(report: MetricsReport) -> str:
    if report.pretrain_seconds:
        return f"{report.pretrain_seconds:.0f}+{report.train_seconds:.0f}"
    return f"{report.train_seconds:.0f}"


def table1_rows(reports) -> list[list[str]]:
    gold = next(r for r in reports if r.method == "gold-standard")
    return [[r.method, format_with_drop(r.hr_at_10, gold.hr_at_10),
             format_with_drop(r.ndcg_at_10, gold.ndcg_at_10), format_time(r)] for r in reports]


# ---------------------------------------------------------------------------
# commands

def cmd_pipeline(config: RunConfig, experiment: Experiment | None = None) -> MetricsReport:
    experiment = experiment or Experiment.load(config)
    report = experiment.run()
    path = write_metrics_csv([report], Path(config.out) / "metrics.csv")
    logger.info("wrote %s", path)
    return report


def cmd_sweep(config: RunConfig, ratios, experiment: Experiment | None = None) -> list[MetricsReport]:
    """One run per filtering ratio (full/selected, so 10 keeps 10%); pretraining is shared."""
    experiment = experiment or Experiment.load(config)
    reports = [experiment.run(fraction=filtering_fraction(r)) for r in sorted(ratios)]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ratio", "fraction", "hr10", "ndcg10"])
        for r, rep in zip(sorted(ratios), reports):
            writer.writerow([f"{r:g}", f"{rep.ratio:.6g}", f"{rep.hr_at_10:.4f}", f"{rep.ndcg_at_10:.4f}"])
    write_metrics_csv(reports, out / "sweep_metrics.csv")
    return reports


def cmd_table1(config: RunConfig, experiment: Experiment | None = None,
               methods=TABLE1_METHODS) -> list[MetricsReport]:
    experiment = experiment or Experiment.load(config)
    reports = [experiment.run(method=m, strategy="init-frz" if m in PRETRAINED_METHODS else None)
               for m in methods]
    out = Path(config.out)
    write_metrics_csv(reports, out / "table1_metrics.csv")
    with open(out / "table1.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "hr10", "ndcg10", "time_s"])
        writer.writerows(table1_rows(reports))
    return reports
