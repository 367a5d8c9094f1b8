"""Command-line pipeline: prepare, train, impute, evaluate, export-embeddings, ablate.

A run lives in a work directory::

    workdir/
      pairs/reference/   pairs.csv + patches/      (prepare)
      pairs/query/       pairs.csv + patches/      (prepare)
      panel.csv  summary.json                      (prepare)
      checkpoint.npz  losses.csv                   (train)
      bank/  predictions.csv                       (impute)
      metrics.json  per_gene_metrics.csv           (evaluate)
      embeddings.csv                               (export-embeddings)
      ablation/<cell>/...  ablation.json  ablation.csv   (ablate)

Options come from defaults, then an optional flat ``key=value`` config file,
then flags (highest precedence). Omitting ``--seed`` draws a random one and
records it in every written config echo. Exit codes: 0 ok, 2 usage/data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .data.io import (
    load_manifest,
    load_pairs,
    save_pairs,
    save_panel,
    save_summary,
)
from .data.normalize import normalize_expression
from .data.panels import select_heg, select_hvg
from .data.patches import build_pairs
from .errors import (
    KOutOfRange,
    NonFiniteInput,
    NonFiniteLoss,
    ParseError,
    PatchspotError,
    ShapeMismatch,
)
from .losses import LOSS_MODES, LossConfig
from .retrieval.bank import (
    build_bank,
    embed_patches,
    export_embeddings,
    impute_batch,
    save_bank,
)
from .training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    save_losses_csv,
    train,
)

ABLATION_CELLS = (
    ("full", "image_centric", True),
    ("no_augment", "image_centric", False),
    ("clip_loss", "clip_soft", True),
    ("clip_loss_no_augment", "clip_soft", False),
)


@dataclass
class RunConfig:
    manifest: str | None = None
    workdir: str = "."
    panel: str = "heg"
    panel_size: int = 3500
    holdout: list[str] = field(default_factory=list)
    epochs: int = 15
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    split_fraction: float = 0.8
    temperature: float = 1.0
    spot_term_weight: float = 0.0
    loss: str = "image_centric"
    augment: bool = True
    d_o: int = 256
    backbone: str = "compact"
    feature_dim: int = 32
    dropout: float = 0.1
    backbone_weights: str | None = None
    k: int = 50
    include_query_in_reference: bool = False
    seed: int | None = None
    pairs_dir: str | None = None  # ablation cells read pairs from the parent workdir

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.lr,
            weight_decay=self.weight_decay,
            split_fraction=self.split_fraction,
            seed=seed,
            loss=LossConfig(
                temperature=self.temperature,
                mode=self.loss,
                spot_term_weight=self.spot_term_weight,
            ),
            augment=self.augment,
            d_o=self.d_o,
            backbone=self.backbone,
            feature_dim=self.feature_dim,
            dropout=self.dropout,
            backbone_weights=self.backbone_weights,
        )


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_COERCERS = {
    "manifest": str,
    "workdir": str,
    "panel": str,
    "panel_size": int,
    "holdout": lambda v: [s.strip() for s in v.split(",") if s.strip()],
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "split_fraction": float,
    "temperature": float,
    "spot_term_weight": float,
    "loss": str,
    "augment": _parse_bool,
    "d_o": int,
    "backbone": str,
    "feature_dim": int,
    "dropout": float,
    "backbone_weights": str,
    "k": int,
    "include_query_in_reference": _parse_bool,
    "seed": int,
}


def read_config_file(path: str | Path) -> dict:
    """Flat key=value file; blank lines and # comments ignored."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file not found: {path}")
    values: dict = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _COERCERS:
            raise ParseError(f"{path}:{line_no}: unknown config key {key!r}")
        try:
            values[key] = _COERCERS[key](value.strip())
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: bad value for {key}: {exc}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    valid = {f.name for f in fields(RunConfig)}
    for key, val in vars(args).items():
        if key in valid and val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    if cfg.panel not in ("heg", "hvg"):
        raise ParseError(f"panel must be heg or hvg, got {cfg.panel!r}")
    if cfg.loss not in LOSS_MODES:
        raise ParseError(f"loss must be one of {LOSS_MODES}, got {cfg.loss!r}")
    return cfg


def _resolve_seed(cfg: RunConfig) -> int:
    return cfg.seed if cfg.seed is not None else secrets.randbelow(2**31)


def _workdir(cfg: RunConfig) -> Path:
    wd = Path(cfg.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _pairs_root(cfg: RunConfig) -> Path:
    return Path(cfg.pairs_dir) if cfg.pairs_dir else Path(cfg.workdir) / "pairs"


def _echo_config(cfg: RunConfig, seed: int, command: str) -> None:
    payload = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    payload["seed"] = seed
    (_workdir(cfg) / f"{command}_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def cmd_prepare(cfg: RunConfig) -> dict:
    if not cfg.manifest:
        raise ParseError("prepare requires --manifest")
    if not cfg.holdout:
        raise ParseError("prepare requires --holdout naming the query slice(s)")
    seed = _resolve_seed(cfg)
    slices = load_manifest(cfg.manifest)
    by_id = {s.slice_id: s for s in slices}
    missing = [h for h in cfg.holdout if h not in by_id]
    if missing:
        raise ParseError(f"holdout slice(s) not in manifest: {missing}")
    reference = [s for s in slices if s.slice_id not in cfg.holdout]
    query = [s for s in slices if s.slice_id in cfg.holdout]
    if not reference:
        raise ParseError("holdout covers every slice; nothing left for the reference set")

    gene_names = reference[0].gene_names
    for s in slices:
        if s.gene_names != gene_names:
            raise ParseError(f"slice {s.slice_id} gene columns differ from {reference[0].slice_id}")

    normalized = {s.slice_id: normalize_expression(s.counts_matrix()) for s in slices}
    select = select_heg if cfg.panel == "heg" else select_hvg
    panel = select([normalized[s.slice_id] for s in reference], gene_names, cfg.panel_size)

    skipped: dict[str, int] = {}
    archives = {"reference": reference, "query": query}
    sizes = {}
    root = _pairs_root(cfg)
    for name, group in archives.items():
        pairs = []
        for s in group:
            built, report = build_pairs(s, normalized[s.slice_id], panel)
            pairs.extend(built)
            if report.n_skipped:
                skipped[s.slice_id] = report.n_skipped
        save_pairs(pairs, root / name, panel.genes)
        sizes[name] = len(pairs)

    workdir = _workdir(cfg)
    save_panel(panel, workdir / "panel.csv")
    summary = {
        "training_size": sizes["reference"],
        "testing_size": sizes["query"],
        "gene_size": panel.d,
        "panel_mode": cfg.panel,
        "holdout": list(cfg.holdout),
        "skipped_spots": skipped,
        "seed": seed,
    }
    save_summary(summary, workdir / "summary.json")
    _echo_config(cfg, seed, "prepare")
    print(
        f"prepared: training size {summary['training_size']}, "
        f"testing size {summary['testing_size']}, gene size {summary['gene_size']}"
    )
    return summary


def cmd_train(cfg: RunConfig) -> Path:
    seed = _resolve_seed(cfg)
    workdir = _workdir(cfg)
    pairs, _ = load_pairs(_pairs_root(cfg) / "reference")
    checkpoint = train(cfg.train_config(seed), pairs)
    save_checkpoint(checkpoint, workdir / "checkpoint.npz")
    save_losses_csv(checkpoint, workdir / "losses.csv")
    _echo_config(cfg, seed, "train")
    print(
        f"trained {cfg.epochs} epochs; best test loss "
        f"{checkpoint.best_test_loss:.6f} at epoch {checkpoint.epoch_of_best}"
    )
    return workdir / "checkpoint.npz"


def _load_predictions(path: Path) -> tuple[list[tuple[str, str]], tuple[str, ...], np.ndarray]:
    if not path.exists():
        raise ParseError(f"predictions not found: {path} (run impute first)")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["spot_id", "slice_id"]:
            raise ParseError(f"{path}: header must start with spot_id,slice_id")
        genes = tuple(header[2:])
        keys, rows = [], []
        for row in reader:
            keys.append((row[1], row[0]))
            rows.append([float(v) for v in row[2:]])
    return keys, genes, np.array(rows, dtype=np.float64)


def cmd_impute(cfg: RunConfig) -> Path:
    seed = _resolve_seed(cfg)
    workdir = _workdir(cfg)
    checkpoint = load_checkpoint(workdir / "checkpoint.npz")
    reference, genes = load_pairs(_pairs_root(cfg) / "reference")
    query, _ = load_pairs(_pairs_root(cfg) / "query", expected_genes=genes)
    bank_pairs = reference + query if cfg.include_query_in_reference else reference
    bank = build_bank(checkpoint, bank_pairs)
    if not 1 <= cfg.k <= bank.n:
        raise KOutOfRange(f"K={cfg.k} outside [1, {bank.n}]")
    predicted = impute_batch(query, checkpoint, bank, cfg.k)
    save_bank(bank, workdir / "bank")
    out = workdir / "predictions.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spot_id", "slice_id", *genes])
        for pair, row in zip(query, predicted):
            writer.writerow([pair.spot_id, pair.slice_id, *[f"{v:.17g}" for v in row]])
    _echo_config(cfg, seed, "impute")
    print(f"imputed {len(query)} query spots from a bank of {bank.n} (K={cfg.k})")
    return out


def cmd_evaluate(cfg: RunConfig) -> metrics_mod.MetricsReport:
    seed = _resolve_seed(cfg)
    workdir = _workdir(cfg)
    keys, genes, predicted = _load_predictions(workdir / "predictions.csv")
    query, query_genes = load_pairs(_pairs_root(cfg) / "query")
    if genes != query_genes:
        raise ShapeMismatch(
            f"predictions carry {len(genes)} genes but the query archive has "
            f"{len(query_genes)}; headers disagree"
        )
    truth_by_key = {p.key: p.expression for p in query}
    missing = [k for k in keys if k not in truth_by_key]
    if missing:
        raise ParseError(f"predictions reference unknown spots, e.g. {missing[0]}")
    truth = np.stack([truth_by_key[k] for k in keys]).astype(np.float64)
    report = metrics_mod.evaluate_predictions(truth, predicted)
    metrics_mod.save_report(report, workdir / "metrics.json")
    metrics_mod.save_per_gene_csv(report, genes, workdir / "per_gene_metrics.csv")
    _echo_config(cfg, seed, "evaluate")
    hits = " ".join(f"hit@{t}={v:.4f}" for t, v in sorted(report.hit_at.items()))
    print(
        f"evaluated {report.n_spots} spots: rmse median {report.rmse_median:.4f}, "
        f"ssim median {report.ssim_median:.4f}, {hits}"
    )
    return report


def cmd_export_embeddings(cfg: RunConfig) -> Path:
    seed = _resolve_seed(cfg)
    workdir = _workdir(cfg)
    checkpoint = load_checkpoint(workdir / "checkpoint.npz")
    reference, genes = load_pairs(_pairs_root(cfg) / "reference")
    query, _ = load_pairs(_pairs_root(cfg) / "query", expected_genes=genes)
    bank = build_bank(checkpoint, reference)
    query_embeddings = embed_patches(checkpoint, query)
    out = workdir / "embeddings.csv"
    export_embeddings(bank, query_embeddings, [p.key for p in query], out)
    _echo_config(cfg, seed, "export-embeddings")
    print(f"exported {bank.n} reference + {len(query)} query embeddings")
    return out


def cmd_ablate(cfg: RunConfig) -> dict:
    """Four pipelines sharing one seed: {image_centric, clip_soft} x {augment, none}."""
    seed = _resolve_seed(cfg)
    workdir = _workdir(cfg)
    parent_pairs = str(_pairs_root(cfg))
    report: dict = {"seed": seed, "cells": []}
    for name, loss_mode, augment in ABLATION_CELLS:
        cell_cfg = replace(
            cfg,
            workdir=str(workdir / "ablation" / name),
            loss=loss_mode,
            augment=augment,
            seed=seed,
            pairs_dir=parent_pairs,
        )
        cell: dict = {"name": name, "loss": loss_mode, "augment": augment}
        try:
            cmd_train(cell_cfg)
            cmd_impute(cell_cfg)
            cell_report = cmd_evaluate(cell_cfg)
            cell["metrics"] = {
                "rmse_median": cell_report.rmse_median,
                "rmse_mean": cell_report.rmse_mean,
                "ssim_median": cell_report.ssim_median,
                "ssim_mean": cell_report.ssim_mean,
                **{f"hit@{t}": v for t, v in sorted(cell_report.hit_at.items())},
            }
        except Exception as exc:  # keep remaining cells running
            cell["error"] = f"{type(exc).__name__}: {exc}"
        report["cells"].append(cell)

    (workdir / "ablation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    columns = [
        "rmse_median", "rmse_mean", "ssim_median", "ssim_mean", "hit@1", "hit@2", "hit@3",
    ]
    with open(workdir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "loss", "augment", *columns, "error"])
        for cell in report["cells"]:
            stats = cell.get("metrics", {})
            writer.writerow(
                [cell["name"], cell["loss"], cell["augment"]]
                + [f"{stats[c]:.17g}" if c in stats else "" for c in columns]
                + [cell.get("error", "")]
            )
    _echo_config(cfg, seed, "ablate")
    for cell in report["cells"]:
        status = "ok" if "metrics" in cell else f"FAILED ({cell['error']})"
        print(f"ablation cell {cell['name']}: {status}")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchspot",
        description="Contrastive patch-spot embedding, retrieval imputation, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--workdir", help="run directory (default .)")
        p.add_argument("--seed", type=int, help="global seed; random if omitted")

    p = sub.add_parser("prepare", help="build pairs archives, panel, and summary")
    common(p)
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--panel", choices=["hvg", "heg"])
    p.add_argument("--panel-size", dest="panel_size", type=int)
    p.add_argument(
        "--holdout",
        type=lambda v: [s.strip() for s in v.split(",") if s.strip()],
        help="query slice id(s), comma separated",
    )

    def train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--temperature", type=float)
        p.add_argument("--loss", choices=list(LOSS_MODES))
        p.add_argument(
            "--no-augment", dest="augment", action="store_const", const=False, default=None
        )

    p = sub.add_parser("train", help="train encoders on the reference pairs")
    common(p)
    train_flags(p)

    p = sub.add_parser("impute", help="build the bank and impute query expression")
    common(p)
    p.add_argument("--k", type=int)
    p.add_argument(
        "--include-query-in-reference",
        dest="include_query_in_reference",
        action="store_const",
        const=True,
        default=None,
        help="also add query pairs to the reference bank (label-leaking reproduction mode)",
    )

    p = sub.add_parser("evaluate", help="score predictions against query truth")
    common(p)

    p = sub.add_parser("export-embeddings", help="dump reference+query embeddings to CSV")
    common(p)

    p = sub.add_parser("ablate", help="run the 4-cell loss/augmentation grid")
    common(p)
    train_flags(p)
    p.add_argument("--k", type=int)

    return parser


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "export-embeddings": cmd_export_embeddings,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _COMMANDS[args.command](cfg)
    except (NonFiniteLoss, NonFiniteInput) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (PatchspotError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
