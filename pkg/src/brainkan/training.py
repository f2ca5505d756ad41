"""Training loop, stratified cross-validation, the cross-cohort protocol,
and the experiment grid over sampling strategies, backbones, and FFN/head
variants.

Determinism contract: model initialization is driven by the model config
seed (offset by fold index inside cross-validation), while shuffling and
DropPath draw from a stream derived from the training spec seed via
SeedSequence spawning, so any run replays bitwise.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .anchors import default_tau, grid_anchor_selection, random_anchor_selection
from .autodiff import AdamState, adam_step, backward, zero_grads
from .checkpoint import save_checkpoint
from .features import (
    FunctionRepresentation,
    iterative_sampling_representation,
    random_sampling_representation,
)
from .metrics import METRIC_NAMES, MetricsReport, compute_metrics
from .model import (
    ClassifierModel,
    ModelConfig,
    VARIANTS,
    build_model,
    count_parameters,
    embed_batch,
    forward,
    model_loss,
    parse_variant,
)
from .rng import make_rng, subject_seed
from .volume import SyntheticCohort


class StratificationError(ValueError):
    pass


@dataclass
class TrainSpec:
    epochs: int = 100
    learning_rate: float = 0.0009
    batch_size: int = 8
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        # learning_rate 0 is allowed as a diagnostic no-op configuration
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class FoldResult:
    fold_index: int
    metrics: MetricsReport
    train_loss_history: list[float]
    scores: np.ndarray  # held-out positive-class probabilities
    labels: np.ndarray
    checkpoint_path: str | None = None

    def as_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "metrics": self.metrics.as_dict(),
            "train_loss_history": list(self.train_loss_history),
            "scores": [float(s) for s in self.scores],
            "labels": [int(v) for v in self.labels],
            "checkpoint": self.checkpoint_path,
        }


Dataset = Sequence[tuple[FunctionRepresentation, int]]


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """k disjoint index sets covering all samples, class-proportional within 1."""
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    rng = make_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if idx.size < k:
            raise StratificationError(
                f"class {cls} has {idx.size} members, fewer than {k} folds"
            )
        idx = rng.permutation(idx)
        base, extra = divmod(idx.size, k)
        start = 0
        for f in range(k):
            take = base + (1 if f < extra else 0)
            folds[f].extend(idx[start : start + take].tolist())
            start += take
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def _batch_iter(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def scores_from_logits(logits: np.ndarray) -> np.ndarray:
    """Positive-class probabilities from (B, 2) logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 1] / e.sum(axis=1)


def evaluate(model: ClassifierModel, dataset: Dataset) -> tuple[MetricsReport, np.ndarray, np.ndarray]:
    """Eval-mode metrics over a dataset; returns (report, scores, labels)."""
    reps = [r for r, _ in dataset]
    labels = np.array([y for _, y in dataset], dtype=np.int64)
    logits = forward(model, embed_batch(model, reps), training=False).data
    scores = scores_from_logits(logits)
    return compute_metrics(scores, labels), scores, labels


def train_one(
    model: ClassifierModel,
    train_set: Dataset,
    spec: TrainSpec,
    rng: np.random.Generator | None = None,
    eval_set: Dataset | None = None,
    fold_index: int = 0,
    checkpoint_path=None,
) -> FoldResult:
    """Adam on cross-entropy for ``spec.epochs`` epochs; metrics on
    ``eval_set`` when given, else on the training set."""
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if rng is None:
        rng = make_rng(spec.seed)
    params = model.parameters()
    state = AdamState.for_params(params, learning_rate=spec.learning_rate)
    reps = [r for r, _ in train_set]
    labels = np.array([y for _, y in train_set], dtype=np.int64)
    n = len(train_set)
    batch_size = min(spec.batch_size, n)

    history: list[float] = []
    for _epoch in range(spec.epochs):
        total = 0.0
        for batch in _batch_iter(n, batch_size, rng):
            tokens = embed_batch(model, [reps[i] for i in batch])
            loss = model_loss(model, tokens, labels[batch], training=True, rng=rng)
            zero_grads(params)
            backward(loss)
            adam_step(params, [p.grad for p in params], state)
            total += loss.item() * batch.size
        history.append(total / n)

    report, scores, eval_labels = evaluate(model, eval_set if eval_set is not None else train_set)
    if checkpoint_path is not None:
        save_checkpoint(model.named_parameters(), checkpoint_path)
    return FoldResult(
        fold_index=fold_index,
        metrics=report,
        train_loss_history=history,
        scores=scores,
        labels=eval_labels,
        checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
    )


def summarize_folds(fold_results: Sequence[FoldResult]) -> dict[str, dict[str, float]]:
    """Per-metric mean and sample standard deviation (ddof=1) across folds."""
    out = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(f.metrics, name) for f in fold_results], dtype=np.float64)
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        out[name] = {"mean": float(values.mean()), "std": std}
    return out


def cross_validate(
    dataset: Dataset,
    model_config: ModelConfig,
    train_spec: TrainSpec,
    checkpoint_dir=None,
) -> tuple[list[FoldResult], dict[str, dict[str, float]]]:
    """Stratified k-fold CV with a fresh model per fold, evaluated on the
    held-out fold only."""
    labels = np.array([y for _, y in dataset], dtype=np.int64)
    folds = stratified_folds(labels, train_spec.folds, train_spec.seed)
    streams = [
        np.random.Generator(np.random.PCG64(s))
        for s in np.random.SeedSequence(train_spec.seed).spawn(len(folds))
    ]
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    results = []
    all_idx = np.arange(len(dataset))
    for fold_index, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, test_idx)
        fold_config = dataclasses.replace(model_config, seed=model_config.seed + fold_index)
        model = build_model(fold_config, n_anchors=dataset[0][0].n_anchors)
        ckpt = checkpoint_dir / f"fold_{fold_index}.ckpt" if checkpoint_dir else None
        results.append(
            train_one(
                model,
                [dataset[i] for i in train_idx],
                train_spec,
                rng=streams[fold_index],
                eval_set=[dataset[i] for i in test_idx],
                fold_index=fold_index,
                checkpoint_path=ckpt,
            )
        )
    return results, summarize_folds(results)


def cross_cohort_protocol(
    train_set: Dataset,
    test_set: Dataset,
    model_config: ModelConfig,
    train_spec: TrainSpec,
    checkpoint_path=None,
) -> FoldResult:
    """Train on one cohort, evaluate on another (cross-site shape)."""
    model = build_model(model_config, n_anchors=train_set[0][0].n_anchors)
    return train_one(
        model,
        train_set,
        train_spec,
        eval_set=test_set,
        checkpoint_path=checkpoint_path,
    )


# ---------------------------------------------------------------------------
# feature extraction over a cohort


@dataclass
class ExtractionSpec:
    """How anchors are chosen and patches are sampled for every subject."""

    n_anchors: int = 16
    patch_size: int = 8
    sizes: tuple[int, ...] = (8, 12, 16)
    n_patches: int = 32
    tau: int | None = None  # random anchors; None -> ceil(patch_size^3 / 2)
    grid_stride: int | None = None  # grid anchors; None -> patch_size
    grid_offset: int = 0
    grid_tau: int = 0
    seed: int = 0
    max_attempts: int = 1000


def select_anchors(mask, method: str, spec: ExtractionSpec):
    if method == "grid":
        stride = spec.grid_stride if spec.grid_stride is not None else spec.patch_size
        return grid_anchor_selection(
            mask, spec.patch_size, stride, spec.grid_offset, tau=spec.grid_tau
        )
    if method == "random":
        return random_anchor_selection(
            mask,
            spec.patch_size,
            spec.n_anchors,
            tau=spec.tau if spec.tau is not None else default_tau(spec.patch_size),
            seed=spec.seed,
            max_attempts=spec.max_attempts,
        )
    raise ValueError(f"unknown anchor method {method!r}")


def extract_features(
    cohort: SyntheticCohort,
    anchor_method: str,
    patching: str,
    spec: ExtractionSpec,
    anchor_set=None,
) -> tuple[list[tuple[FunctionRepresentation, int]], object]:
    """Per-subject representations under one (anchor, patching) strategy.

    Subject i samples with seed ``spec.seed XOR i``. Pass ``anchor_set`` to
    reuse previously selected anchors (e.g. across cohorts).
    """
    if patching not in ("random", "iterative"):
        raise ValueError(f"unknown patching strategy {patching!r}")
    mask = cohort.subjects[0].mask
    if anchor_set is None:
        anchor_set = select_anchors(mask, anchor_method, spec)
    dataset = []
    for i, subj in enumerate(cohort.subjects):
        s = subject_seed(spec.seed, i)
        if patching == "random":
            rep = random_sampling_representation(
                subj.volume, subj.mask, anchor_set,
                spec.n_patches, spec.patch_size, s, spec.max_attempts,
            )
        else:
            rep = iterative_sampling_representation(
                subj.volume, subj.mask, anchor_set,
                spec.n_patches, spec.sizes, s, spec.max_attempts,
            )
        dataset.append((rep, subj.label))
    return dataset, anchor_set


# ---------------------------------------------------------------------------
# experiment grid


def flag_best(rows: list[dict], metric_names=METRIC_NAMES) -> None:
    """Mark per-column best and second-best mean values in place.

    Ties resolve to the earliest row, matching a plain argmax sweep.
    """
    for row in rows:
        row["flags"] = {}
    for name in metric_names:
        means = [row["metrics"][name]["mean"] for row in rows]
        if not means:
            continue
        best = int(np.argmax(means))
        rows[best]["flags"][name] = "best"
        if len(means) > 1:
            rest = [m for i, m in enumerate(means) if i != best]
            second_local = int(np.argmax(rest))
            second = second_local if second_local < best else second_local + 1
            rows[second]["flags"][name] = "second"


def run_grid_cells(
    features_by_strategy: dict[tuple[str, str], Dataset],
    train_spec: TrainSpec,
    model_template: ModelConfig | None = None,
    cells: Sequence[tuple[str, str, str, str]] | None = None,
    cell_sink: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Cross-validate every requested (sampling, patching, backbone, variant)
    cell over pre-extracted features; rows carry mean +/- std per metric, a
    parameter count, and best/second flags per metric column.

    ``cell_sink`` receives each row as it completes, so partial results
    survive a failure in a later cell.
    """
    template = model_template if model_template is not None else ModelConfig()
    if cells is None:
        cells = [
            (sampling, patching, backbone, variant)
            for (sampling, patching) in features_by_strategy
            for backbone in ("vit", "deit")
            for variant in VARIANTS
        ]
    rows: list[dict] = []
    for sampling, patching, backbone, variant in cells:
        key = (sampling, patching)
        if key not in features_by_strategy:
            raise ValueError(f"no features extracted for strategy {key}")
        dataset = features_by_strategy[key]
        ffn, head = parse_variant(variant)
        config = dataclasses.replace(template, backbone=backbone, encoder_ffn=ffn, head=head)
        fold_results, summary = cross_validate(dataset, config, train_spec)
        row = {
            "anchor_method": sampling,
            "patching": patching,
            "backbone": backbone,
            "variant": variant,
            "metrics": summary,
            "n_parameters": count_parameters(build_model(config, dataset[0][0].n_anchors)),
            "folds": [f.as_dict() for f in fold_results],
        }
        rows.append(row)
        if cell_sink is not None:
            cell_sink(row)
    flag_best(rows)
    return rows


def run_experiment_grid(
    cohort: SyntheticCohort,
    train_spec: TrainSpec,
    extraction: ExtractionSpec,
    model_template: ModelConfig | None = None,
    samplings: Sequence[str] = ("grid", "random"),
    patchings: Sequence[str] = ("random", "iterative"),
    backbones: Sequence[str] = ("vit", "deit"),
    variants: Sequence[str] = VARIANTS,
    cell_sink: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Extract features once per sampling strategy, then sweep the cells."""
    features: dict[tuple[str, str], Dataset] = {}
    for sampling in samplings:
        for patching in patchings:
            features[(sampling, patching)], _ = extract_features(
                cohort, sampling, patching, extraction
            )
    cells = [
        (sampling, patching, backbone, variant)
        for sampling in samplings
        for patching in patchings
        for backbone in backbones
        for variant in variants
    ]
    return run_grid_cells(features, train_spec, model_template, cells, cell_sink)


def grid_rows_to_csv(rows: list[dict], path) -> None:
    """Results table: one row per cell, mean +/- std and flag per metric."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["anchor_method", "patching", "backbone", "variant", "n_parameters"]
        for name in METRIC_NAMES:
            header += [f"{name}_mean", f"{name}_std", f"{name}_flag"]
        writer.writerow(header)
        for row in rows:
            record = [
                row["anchor_method"], row["patching"], row["backbone"], row["variant"],
                row["n_parameters"],
            ]
            for name in METRIC_NAMES:
                m = row["metrics"][name]
                record += [f"{m['mean']:.6f}", f"{m['std']:.6f}", row["flags"].get(name, "")]
            writer.writerow(record)


def grid_rows_to_json(rows: list[dict], path) -> None:
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")
