#!/usr/bin/env python3
"""
Command-line entry point for the CDR design pipeline.

Subcommands:
- synth     write a synthetic dataset (PDB files + manifest)
- train     run the three-phase schedule and write a checkpoint
- eval      decode every manifest complex and score the predictions
- diagnose  failure-mode bundle for one or more prediction directories

Exit codes: 0 success, 1 runtime failure, 2 usage / config / manifest error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from diagnostics import (
    PredictionRecord,
    comparison_table,
    evaluate_predictions,
    load_predictions,
    write_prediction,
    write_report,
)
from errors import ConfigError, ConfigHashMismatch, EmptyDataset, EvoStructError, ManifestError
from model import EvoStructModel, Sample, prepare_sample
from numeric_core import CHECKPOINT_META, load_checkpoint, resolve_dtype, save_checkpoint
from plm_backend import make_backend
from run_config import RESOLVED_CONFIG, RunConfig, load_config
from structure_io import Complex, load_complexes, load_manifest
from synthetic_data import SynthConfig, generate_dataset
from training import run_phase_schedule

logger = logging.getLogger(__name__)

TRAIN_LOG = "train_log.jsonl"


# -----------------------------------------------------------------------------
# Helpers
# -----------------------------------------------------------------------------


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s", force=True)


def _threads(cfg: RunConfig) -> int:
    env = os.getenv("EVOSTRUCT_THREADS")
    if env is None:
        return cfg.threads
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"EVOSTRUCT_THREADS must be an integer, got {env!r}") from None


def prepare_samples(complexes: Sequence[Complex], cfg: RunConfig) -> list[Sample]:
    """Build graphs concurrently; output order follows the manifest."""
    with ThreadPoolExecutor(max_workers=_threads(cfg)) as pool:
        return list(pool.map(lambda c: prepare_sample(c, cfg.cdr, cfg.graph), complexes))


def build_model(cfg: RunConfig) -> EvoStructModel:
    dtype = resolve_dtype(cfg.precision)
    backend = make_backend(cfg.backend, cfg.seed, cdr=cfg.cdr, dtype=dtype)
    return EvoStructModel(backend, cfg.graph, cfg.encoder, cfg.adapter, seed=cfg.seed, dtype=dtype)


def _load_dataset(manifest_path: str, cfg: RunConfig):
    manifest = load_manifest(manifest_path)
    complexes = load_complexes(manifest, cfg.graph.contact_cutoff, cfg.cdr)
    splits = {e.id: e.split for e in manifest.entries}
    return complexes, splits


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        precision=getattr(args, "precision", None),
        backend_kind=getattr(args, "backend", None),
    )


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def cmd_synth(args) -> int:
    generate_dataset(args.seed or 0, args.n, args.out, SynthConfig(val_fraction=args.val_fraction))
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    complexes, splits = _load_dataset(args.manifest, cfg)
    if not complexes:
        raise EmptyDataset(f"{args.manifest} lists no complexes")
    samples = prepare_samples(complexes, cfg)
    train = [s for s in samples if splits[s.id] == "train"]
    val = [s for s in samples if splits[s.id] == "val"]
    logger.info(f"Training on {len(train)} complexes, validating on {len(val) or len(train)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / RESOLVED_CONFIG)
    model = build_model(cfg)
    result = run_phase_schedule(
        model,
        train,
        val,
        cfg.loss,
        cfg.schedule,
        seed=cfg.seed,
        unfreeze_top=cfg.backend.unfreeze_top,
        log_path=out / TRAIN_LOG,
    )
    save_checkpoint(out, model.parameters(), {
        "phase": result.best_phase,
        "epoch": result.best_epoch,
        "val_loss": result.best_val,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "precision": cfg.precision,
    })
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not (ckpt / CHECKPOINT_META).exists():
        raise ConfigError("no checkpoint metadata found", str(ckpt))
    arrays, meta = load_checkpoint(ckpt)
    cfg = load_config(args.config) if args.config else load_config(ckpt / RESOLVED_CONFIG)
    if cfg.hash() != meta.get("config_hash"):
        raise ConfigHashMismatch(f"config hash {cfg.hash()[:12]} does not match checkpoint "
                                 f"{str(meta.get('config_hash'))[:12]}")
    cfg = cfg.with_overrides(backend_kind=args.backend)

    complexes, splits = _load_dataset(args.manifest, cfg)
    if args.split != "all":
        complexes = [c for c in complexes if splits[c.id] == args.split]
    if not complexes:
        raise EmptyDataset(f"{args.manifest} has no complexes for split {args.split!r}")
    samples = prepare_samples(complexes, cfg)

    model = build_model(cfg)
    model.load_state(arrays)
    out = Path(args.out)
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for sample in samples:
        pred = model.predict(sample)
        record = PredictionRecord(pred.id, pred.cdr, pred.predicted_seq, pred.logits, pred.cdr_ca)
        write_prediction(record, pred_dir)
        records.append(record)

    report = evaluate_predictions(records, {c.id: c for c in complexes}, cfg.graph.contact_cutoff,
                                  method=args.method)
    write_report(report, out / "report")
    aar = report.summary["AAR"]
    logger.info(f"AAR {aar['mean']:.3f} ± {aar['std']:.3f} over {aar['n']} complexes")
    return 0


def _parse_prediction_sources(values: Sequence[str]) -> list[tuple[str, Path]]:
    sources = []
    for value in values:
        name, sep, path = value.partition("=")
        if not sep:
            name, path = Path(value).name or "predictions", value
        sources.append((name, Path(path)))
    names = [n for n, _ in sources]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate method names in --predictions: {names}")
    return sources


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    complexes, _ = _load_dataset(args.manifest, cfg)
    by_id = {c.id: c for c in complexes}
    out = Path(args.out)
    reports = []
    for name, pred_dir in _parse_prediction_sources(args.predictions):
        records = load_predictions(pred_dir)
        report = evaluate_predictions(records, by_id, cfg.graph.contact_cutoff, method=name)
        write_report(report, out / name)
        reports.append(report)
    out.mkdir(parents=True, exist_ok=True)
    comparison_table(reports).to_csv(out / "comparison.csv", index=False)
    logger.info(f"Diagnosed {len(reports)} prediction sets into {out}")
    return 0


# -----------------------------------------------------------------------------
# Main entrypoint
# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evostruct", description="Structure-conditioned CDR sequence design")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic dataset")
    synth.add_argument("--seed", type=int, default=int(os.getenv("EVOSTRUCT_SEED", "0")))
    synth.add_argument("--n", type=int, default=8)
    synth.add_argument("--out", required=True)
    synth.add_argument("--val-fraction", type=float, default=0.0)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="Train with the three-phase schedule")
    train.add_argument("--config", help="Path to JSON run config")
    train.add_argument("--manifest", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("--backend", choices=("toy", "cache"))
    train.add_argument("--precision", choices=("f32", "f64"))
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("eval", help="Decode and score a manifest")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--manifest", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--config", help="Config to verify against the checkpoint")
    evaluate.add_argument("--backend", choices=("toy", "cache"))
    evaluate.add_argument("--split", choices=("all", "train", "val"), default="all")
    evaluate.add_argument("--method", default="evostruct", help="Method name used in report tables")
    evaluate.set_defaults(func=cmd_eval)

    diagnose = sub.add_parser("diagnose", help="Failure-mode diagnostics for prediction dumps")
    diagnose.add_argument("--predictions", action="append", required=True,
                          help="Prediction directory, optionally as name=dir; repeatable")
    diagnose.add_argument("--manifest", required=True)
    diagnose.add_argument("--out", required=True)
    diagnose.add_argument("--config", help="Path to JSON run config (contact cutoff, CDR)")
    diagnose.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, FileNotFoundError) as e:
        logger.error(str(e))
        return 2
    except EvoStructError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
