"""Command-line entry point: ``cadc <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import METHODS, ConfigError, RunConfig, load_config
from .dataset import DatasetError, Interactions, parse_interactions, sample_uniform
from .evaluation import evaluate
from .storage import EmbeddingFileError, load_embeddings, load_ttnn, save_embeddings, save_ttnn
from .ttnn import STRATEGIES, IntegrationStrategy, build_ttnn, train_ttnn

logger = logging.getLogger("cadc")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--ratings", help="interaction log (ratings.dat or TSV)")
    p.add_argument("--format", choices=("movielens-dat", "tsv"))
    p.add_argument("--users", help="MovieLens users.dat")
    p.add_argument("--items", help="MovieLens movies.dat")
    p.add_argument("--schema", choices=("movielens", "none"))
    p.add_argument("--name", help="dataset label used in reports")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--strategy", choices=[s for s in STRATEGIES if s != "random"])
    p.add_argument("--ratio", type=float, help="sampling fraction in (0, 1]")
    p.add_argument("--filter-ratio", type=float,
                   help="full/selected filtering ratio, e.g. 10 keeps 10%% (overrides --ratio)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--mf-epochs", type=int)
    p.add_argument("--emb", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--k-neg", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mf-lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def config_from_args(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}
    if getattr(args, "filter_ratio", None):
        overrides["ratio"] = pipeline.filtering_fraction(args.filter_ratio)
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _write_tsv(inter: Interactions, dataset, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for u, i, t in zip(inter.user.tolist(), inter.item.tolist(), inter.timestamp.tolist()):
            fh.write(f"{dataset.user_ids[u]}\t{dataset.item_ids[i]}\t{t}\n")


def _read_subset(path, dataset) -> Interactions:
    raw = parse_interactions(path, "tsv")
    inter = raw.interactions
    try:
        users = [dataset.user_index[raw.user_ids[u]] for u in inter.user.tolist()]
        items = [dataset.item_index[raw.item_ids[i]] for i in inter.item.tolist()]
    except KeyError as exc:
        raise DatasetError(f"{path}: id {exc} not present in the dataset") from None
    return Interactions.from_arrays(users, items, inter.timestamp)


def cmd_ingest(cfg, args):
    exp = pipeline.Experiment.load(cfg)
    out = Path(cfg.out) / "split"
    for part in ("train", "validation", "test"):
        _write_tsv(getattr(exp.split, part), exp.dataset, out / f"{part}.tsv")
    summary = {"dataset": exp.dataset.name, "users": exp.dataset.n_users, "items": exp.dataset.n_items,
               "interactions": len(exp.dataset.interactions), "train": len(exp.split.train),
               "validation": len(exp.split.validation), "test": len(exp.split.test),
               "user_features": exp.dataset.user_features.shape[1],
               "item_features": exp.dataset.item_features.shape[1]}
    print(json.dumps(summary, indent=2))


def cmd_pretrain(cfg, args):
    exp = pipeline.Experiment.load(cfg)
    variant = "mf-mlp" if cfg.method == "cadc-mlp" else "mf"
    tables, seconds = exp.pretrain(variant)
    prefix = Path(args.embeddings or Path(cfg.out) / "embeddings")
    paths = save_embeddings(tables, prefix)
    print(f"pretrained {variant} in {seconds:.1f}s -> {paths[0]}, {paths[1]}")


def cmd_compress(cfg, args):
    exp = pipeline.Experiment.load(cfg)
    subset = sample_uniform(exp.split.train, cfg.ratio, cfg.seed)
    path = Path(args.output or Path(cfg.out) / "compressed.tsv")
    _write_tsv(subset, exp.dataset, path)
    print(f"kept {len(subset)} of {len(exp.split.train)} training interactions -> {path}")


def cmd_train(cfg, args):
    exp = pipeline.Experiment.load(cfg)
    if args.subset:
        subset, logq = _read_subset(args.subset, exp.dataset), None
    else:
        subset, logq = exp.training_subset(cfg.method, cfg.ratio)
    if args.embeddings:
        user_table, item_table = load_embeddings(args.embeddings)
        integration = IntegrationStrategy(cfg.strategy or "init-frz", user_table, item_table)
    else:
        integration = IntegrationStrategy("random")
    tcfg = pipeline.ttnn_config(cfg)
    model = build_ttnn(exp.dataset, integration, tcfg)
    model, seconds = train_ttnn(model, subset, exp.dataset, tcfg, logq=logq)
    path = Path(args.model or Path(cfg.out) / "ttnn.npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_ttnn(model, path)
    print(f"trained {integration.kind} two-tower model on {len(subset)} rows in {seconds:.1f}s -> {path}")


def cmd_evaluate(cfg, args):
    exp = pipeline.Experiment.load(cfg)
    model = load_ttnn(args.model or Path(cfg.out) / "ttnn.npz", exp.dataset)
    report = evaluate(model, exp.split)
    report.method, report.ratio, report.seed = cfg.method, cfg.ratio, cfg.seed
    pipeline.write_metrics_csv([report], Path(cfg.out) / "metrics.csv")
    _print_reports([report])


def _print_reports(reports):
    writer = csv.writer(sys.stdout)
    writer.writerow(pipeline.METRICS_HEADER)
    writer.writerows(pipeline.metrics_rows(reports))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "pretrain", "compress", "train", "evaluate", "pipeline", "sweep", "table1"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "pretrain":
            p.add_argument("--embeddings", help="output prefix for <prefix>.user.emb / .item.emb")
        if name == "compress":
            p.add_argument("--output", help="TSV path for the compressed training log")
        if name == "train":
            p.add_argument("--subset", help="TSV training subset (raw ids); default samples --ratio")
            p.add_argument("--embeddings", help="prefix of pretrained embedding files")
            p.add_argument("--model", help="output .npz path")
        if name == "evaluate":
            p.add_argument("--model", help="trained .npz model")
        if name == "sweep":
            p.add_argument("--ratios", type=float, nargs="+", default=[1, 2, 5, 10, 20, 50],
                           help="full/selected filtering ratios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = config_from_args(args)
        if not cfg.ratings:
            raise ConfigError("no ratings file given (--ratings or config key 'ratings')")
        handlers = {"ingest": cmd_ingest, "pretrain": cmd_pretrain, "compress": cmd_compress,
                    "train": cmd_train, "evaluate": cmd_evaluate}
        if args.command in handlers:
            handlers[args.command](cfg, args)
        elif args.command == "pipeline":
            _print_reports([pipeline.cmd_pipeline(cfg)])
        elif args.command == "sweep":
            _print_reports(pipeline.cmd_sweep(cfg, args.ratios))
        elif args.command == "table1":
            pipeline.cmd_table1(cfg)
            print((Path(cfg.out) / "table1.csv").read_text(), end="")
    except (ConfigError, DatasetError, EmbeddingFileError, OSError) as exc:
        print(f"cadc: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
