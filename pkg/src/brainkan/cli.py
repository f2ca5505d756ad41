"""Command-line pipeline: generate data, extract representations, train,
cross-validate, sweep the experiment grid, and export ROC/statistics.

Stages hand off through files. Every command writes a ``run_manifest.json``
next to its outputs recording resolved parameters, seeds, input/output
digests, and wall-clock duration; JSON outputs reference that manifest by
name. Optional ``--config-file`` supplies parameter values from JSON;
explicit flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .anchors import load_anchors, save_anchors
from .features import load_representation, save_representation
from .metrics import METRIC_NAMES, compute_metrics, export_roc
from .model import ModelConfig, VARIANTS, parse_variant
from .stats import stats_report
from .training import (
    ExtractionSpec,
    TrainSpec,
    cross_validate,
    extract_features,
    grid_rows_to_csv,
    grid_rows_to_json,
    run_grid_cells,
    train_one,
)
from .model import build_model
from .volume import generate_synthetic_cohort, read_cohort, write_cohort

MANIFEST_NAME = "run_manifest.json"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, params: dict, inputs, outputs, t0: float) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "seeds": {k: v for k, v in params.items() if "seed" in k},
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs],
        "outputs": [
            {"path": str(Path(p).relative_to(out_dir)), "sha256": _sha256(Path(p))}
            for p in outputs
        ],
        "duration_seconds": time.monotonic() - t0,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def _merge_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset (None) options from --config-file JSON; flags win."""
    if getattr(args, "config_file", None) is None:
        return
    try:
        values = json.loads(Path(args.config_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file: {exc}")
    for key, value in values.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) is None:
            setattr(args, attr, value)


def _apply_defaults(args: argparse.Namespace, defaults: dict) -> None:
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _model_config(args) -> ModelConfig:
    ffn, head = parse_variant(args.config)
    return ModelConfig(
        backbone=args.backbone,
        encoder_ffn=ffn,
        head=head,
        d_model=args.d_model,
        depth=args.depth,
        n_heads=args.heads,
        drop_path_rate=args.drop_path,
        seed=args.model_seed,
    )


def _train_spec(args, folds: int | None = None) -> TrainSpec:
    return TrainSpec(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        folds=folds if folds is not None else 5,
        seed=args.train_seed,
    )


def _load_features_manifest(path: Path):
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "brainkan-features":
        raise ValueError(f"{path}: not a features manifest")
    dataset = []
    for entry in manifest["subjects"]:
        rep = load_representation(path.parent / entry["path"])
        dataset.append((rep, int(entry["label"])))
    return dataset, manifest


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", choices=("vit", "deit"))
    p.add_argument("--config", choices=VARIANTS, help="encoder/head variant, e.g. kan-kan")
    p.add_argument("--d-model", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--drop-path", type=float)
    p.add_argument("--model-seed", type=int)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--train-seed", type=int)


_MODEL_TRAIN_DEFAULTS = {
    "backbone": "vit",
    "config": "kan-kan",
    "d_model": 64,
    "depth": 4,
    "heads": 4,
    "drop_path": 0.1,
    "model_seed": 0,
    "epochs": 100,
    "lr": 0.0009,
    "batch_size": 8,
    "train_seed": 0,
}


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, parser) -> int:
    _merge_config_file(args, parser)
    _apply_defaults(
        args,
        {
            "subjects": 40,
            "dims": [32, 16, 16, 16],
            "effect_size": 1.0,
            "latents": 6,
            "noise_std": 1.0,
            "asd_fraction": 0.5,
            "seed": 0,
        },
    )
    t0 = time.monotonic()
    out_dir = Path(args.out_dir)
    cohort = generate_synthetic_cohort(
        n_subjects=args.subjects,
        dims=tuple(args.dims),
        n_latent_signals=args.latents,
        effect_size=args.effect_size,
        seed=args.seed,
        noise_std=args.noise_std,
        asd_fraction=args.asd_fraction,
    )
    manifest_path = write_cohort(out_dir, cohort)
    outputs = sorted(out_dir.glob("subject_*.abfr")) + [manifest_path]
    params = {
        "subjects": args.subjects,
        "dims": list(args.dims),
        "effect_size": args.effect_size,
        "latents": args.latents,
        "noise_std": args.noise_std,
        "asd_fraction": args.asd_fraction,
        "seed": args.seed,
    }
    _write_manifest(out_dir, "gen-data", params, [], outputs, t0)
    print(f"gen-data: wrote {args.subjects} subjects to {out_dir}")
    return 0


def cmd_extract(args, parser) -> int:
    _merge_config_file(args, parser)
    _apply_defaults(
        args,
        {
            "anchors": "random",
            "patching": "random",
            "patch_size": 8,
            "sizes": [8, 12, 16],
            "n_anchors": 16,
            "tau": None,
            "stride": None,
            "offset": 0,
            "grid_tau": 0,
            "n_patches": 32,
            "seed": 0,
            "max_attempts": 1000,
        },
    )
    t0 = time.monotonic()
    cohort = read_cohort(args.cohort)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = ExtractionSpec(
        n_anchors=args.n_anchors,
        patch_size=args.patch_size,
        sizes=tuple(args.sizes),
        n_patches=args.n_patches,
        tau=args.tau,
        grid_stride=args.stride,
        grid_offset=args.offset,
        grid_tau=args.grid_tau,
        seed=args.seed,
        max_attempts=args.max_attempts,
    )
    anchor_set = None
    if args.anchor_file:
        anchor_set = load_anchors(args.anchor_file)
    dataset, anchor_set = extract_features(cohort, args.anchors, args.patching, spec, anchor_set)

    anchors_path = out_dir / "anchors.json"
    save_anchors(anchors_path, anchor_set)
    entries = []
    for i, (rep, label) in enumerate(dataset):
        fname = f"subject_{i:03d}.bkfr"
        save_representation(out_dir / fname, rep, anchors_ref="anchors.json")
        entries.append({"path": fname, "label": label})
    features_manifest = {
        "format": "brainkan-features",
        "anchor_method": args.anchors,
        "patching": args.patching,
        "extraction": dataclasses.asdict(spec),
        "anchors": "anchors.json",
        "subjects": entries,
        "manifest": MANIFEST_NAME,
    }
    features_path = out_dir / "features.json"
    features_path.write_text(json.dumps(features_manifest, indent=2) + "\n")

    outputs = [anchors_path, features_path] + sorted(out_dir.glob("subject_*.bkfr"))
    params = {k: getattr(args, k) for k in (
        "cohort", "anchors", "patching", "patch_size", "sizes", "n_anchors",
        "tau", "stride", "offset", "grid_tau", "n_patches", "seed", "max_attempts",
    )}
    _write_manifest(out_dir, "extract", params, [Path(args.cohort)], outputs, t0)
    print(
        f"extract: {len(dataset)} subjects, {len(anchor_set)} anchors "
        f"({args.anchors}/{args.patching}) -> {out_dir}"
    )
    return 0


def cmd_train(args, parser) -> int:
    _merge_config_file(args, parser)
    _apply_defaults(args, _MODEL_TRAIN_DEFAULTS)
    t0 = time.monotonic()
    dataset, _ = _load_features_manifest(Path(args.features))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _model_config(args)
    spec = _train_spec(args)
    model = build_model(config, n_anchors=dataset[0][0].n_anchors)
    ckpt = out_dir / "model.ckpt"
    result = train_one(model, dataset, spec, checkpoint_path=ckpt)
    results = {
        "model_config": config.to_json(),
        "train_spec": dataclasses.asdict(spec),
        "folds": [result.as_dict()],
        "summary": {
            name: {"mean": getattr(result.metrics, name), "std": 0.0} for name in METRIC_NAMES
        },
        "manifest": MANIFEST_NAME,
    }
    results_path = out_dir / "results.json"
    results_path.write_text(json.dumps(results, indent=2) + "\n")
    params = {**config.to_json(), **dataclasses.asdict(spec), "features": args.features}
    _write_manifest(out_dir, "train", params, [Path(args.features)], [ckpt, results_path], t0)
    print(
        f"train: {args.backbone}/{args.config} final loss "
        f"{result.train_loss_history[-1]:.4f}, train acc {result.metrics.acc:.3f}"
    )
    return 0


def cmd_cv(args, parser) -> int:
    _merge_config_file(args, parser)
    _apply_defaults(args, {**_MODEL_TRAIN_DEFAULTS, "folds": 5})
    if args.folds < 2:
        parser.error(f"--folds must be >= 2, got {args.folds}")
    t0 = time.monotonic()
    dataset, _ = _load_features_manifest(Path(args.features))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _model_config(args)
    spec = _train_spec(args, folds=args.folds)
    fold_results, summary = cross_validate(dataset, config, spec, checkpoint_dir=out_dir)
    results = {
        "model_config": config.to_json(),
        "train_spec": dataclasses.asdict(spec),
        "folds": [f.as_dict() for f in fold_results],
        "summary": summary,
        "manifest": MANIFEST_NAME,
    }
    results_path = out_dir / "results.json"
    results_path.write_text(json.dumps(results, indent=2) + "\n")
    outputs = [results_path] + sorted(out_dir.glob("fold_*.ckpt"))
    params = {**config.to_json(), **dataclasses.asdict(spec), "features": args.features}
    _write_manifest(out_dir, "cv", params, [Path(args.features)], outputs, t0)
    acc = summary["acc"]
    print(f"cv: {args.folds} folds, acc {acc['mean']:.3f} +/- {acc['std']:.3f}")
    return 0


def _parse_cells(specs, available):
    if not specs:
        return None
    cells = []
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 4:
            raise ValueError(f"cell {spec!r} must be sampling:patching:backbone:variant")
        sampling, patching, backbone, variant = parts
        parse_variant(variant)
        if (sampling, patching) not in available:
            raise ValueError(f"cell {spec!r}: no features for strategy {sampling}/{patching}")
        cells.append((sampling, patching, backbone, variant))
    return cells


def cmd_grid(args, parser) -> int:
    _merge_config_file(args, parser)
    _apply_defaults(args, {**_MODEL_TRAIN_DEFAULTS, "folds": 5})
    t0 = time.monotonic()
    features_dir = Path(args.features_dir)
    manifests = sorted(features_dir.glob("**/features.json"))
    if not manifests:
        raise FileNotFoundError(f"no features.json manifests under {features_dir}")
    features_by_strategy = {}
    for path in manifests:
        dataset, manifest = _load_features_manifest(path)
        key = (manifest["anchor_method"], manifest["patching"])
        features_by_strategy[key] = dataset
    cells = _parse_cells(args.cells, features_by_strategy)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _train_spec(args, folds=args.folds)
    template = ModelConfig(
        d_model=args.d_model,
        depth=args.depth,
        n_heads=args.heads,
        drop_path_rate=args.drop_path,
        seed=args.model_seed,
    )

    cell_paths = []

    def sink(row):
        path = out_dir / f"cell_{len(cell_paths):03d}.json"
        path.write_text(json.dumps(row, indent=2) + "\n")
        cell_paths.append(path)

    rows = run_grid_cells(features_by_strategy, spec, template, cells, cell_sink=sink)
    csv_path = out_dir / "grid.csv"
    json_path = out_dir / "grid.json"
    grid_rows_to_csv(rows, csv_path)
    grid_rows_to_json(rows, json_path)
    params = {
        "features_dir": str(features_dir),
        "cells": args.cells or "all",
        **dataclasses.asdict(spec),
        "d_model": args.d_model,
        "depth": args.depth,
        "heads": args.heads,
    }
    _write_manifest(out_dir, "grid", params, manifests, [csv_path, json_path] + cell_paths, t0)
    print(f"grid: {len(rows)} cells -> {csv_path}")
    return 0


def _pooled_scores(results_path: Path):
    results = json.loads(results_path.read_text())
    scores, labels = [], []
    for fold in results["folds"]:
        scores.extend(fold["scores"])
        labels.extend(fold["labels"])
    return np.array(scores), np.array(labels, dtype=np.int64), results


def cmd_roc(args, parser) -> int:
    t0 = time.monotonic()
    paths = [Path(p) for p in args.results]
    names = args.names or [p.parent.name or p.stem for p in paths]
    if len(names) != len(paths):
        parser.error(f"{len(names)} names for {len(paths)} results files")
    named_reports = []
    for name, path in zip(names, paths):
        scores, labels, _ = _pooled_scores(path)
        named_reports.append((name, compute_metrics(scores, labels)))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    export_roc(named_reports, out_path)
    _write_manifest(out_path.parent, "roc", {"results": [str(p) for p in paths], "names": names},
                    paths, [out_path], t0)
    print(f"roc: {len(named_reports)} curves -> {out_path}")
    return 0


def cmd_stats(args, parser) -> int:
    t0 = time.monotonic()
    if len(args.results) < 2:
        parser.error("stats needs at least two results files (one group each)")
    paths = [Path(p) for p in args.results]
    names = args.names or [p.parent.name or p.stem for p in paths]
    if len(names) != len(paths):
        parser.error(f"{len(names)} names for {len(paths)} results files")
    groups = []
    for path in paths:
        results = json.loads(path.read_text())
        groups.append([fold["metrics"][args.metric] for fold in results["folds"]])
    report = stats_report(groups, group_names=names, alpha=args.alpha)
    report["metric"] = args.metric
    report["manifest"] = MANIFEST_NAME
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(out_path.parent, "stats",
                    {"results": [str(p) for p in paths], "metric": args.metric,
                     "alpha": args.alpha, "names": names},
                    paths, [out_path], t0)
    kw = report["kruskal_wallis"]
    print(f"stats[{args.metric}]: H={kw['h']:.4f} p={kw['p_value']:.4g}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainkan",
        description="Randomized brain-patch FC representations with KAN transformer classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled synthetic cohort")
    p.add_argument("--subjects", type=int)
    p.add_argument("--dims", type=int, nargs=4, metavar=("T", "X", "Y", "Z"))
    p.add_argument("--effect-size", type=float)
    p.add_argument("--latents", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--asd-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config-file")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract", help="extract function representations for a cohort")
    p.add_argument("--cohort", required=True, help="cohort.json manifest")
    p.add_argument("--anchors", choices=("grid", "random"))
    p.add_argument("--patching", choices=("random", "iterative"))
    p.add_argument("--patch-size", type=int)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--n-anchors", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--offset", type=int)
    p.add_argument("--grid-tau", type=int)
    p.add_argument("--n-patches", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--anchor-file", help="reuse a serialized anchor set")
    p.add_argument("--out", required=True)
    p.add_argument("--config-file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one model on a features set")
    p.add_argument("--features", required=True, help="features.json manifest")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--config-file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--features", required=True)
    p.add_argument("--folds", type=int)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--config-file")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("grid", help="sweep sampling x backbone x variant cells")
    p.add_argument("--features-dir", required=True,
                   help="directory containing extracted features manifests")
    p.add_argument("--cells", nargs="*",
                   help="cells as sampling:patching:backbone:variant (default: all found)")
    p.add_argument("--folds", type=int)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--config-file")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("roc", help="export pooled ROC curves from results files")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--names", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("stats", help="Kruskal-Wallis + Dunn over per-fold metrics")
    p.add_argument("--results", nargs="+", required=True,
                   help="two or more results.json files; each is one group")
    p.add_argument("--metric", choices=METRIC_NAMES, default="acc")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--names", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"brainkan {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
