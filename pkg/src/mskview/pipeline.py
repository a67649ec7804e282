"""Driver functions that chain the modules: 9-model training, prediction, evaluation."""
import csv
import logging
import time
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ._io import atomic_write_text, config_hash, write_json
from .exams import PLANES, TASKS, LabelVector, SynthConfig, generate_synthetic, iter_exams, load_exam, load_labels
from .fusion import FusionModel, ViewProbTriple, fit_fusion, fuse, group_by_task, view_triple, write_predictions
from .metrics import MULTIVIEW, TASK_CLASS, MetricsRow, metrics_row, render_report, single_view_mode
from .preprocess import StandardizerModel, fit_standardizer
from .trainer import LabeledVolume, TrainConfig, train_view_model
from .viewnet import BackboneSpec, ViewModel, build_view_model, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

DISPLAY_NAMES = {"alexnet": "AlexNet", "resnet18": "ResNet-18", "googlenet": "GoogLeNet", "tiny": "Tiny"}


def fit_plane_standardizers(dataset_root, split: str = "train", exam_ids: Optional[Iterable[str]] = None,
                            planes: Sequence[str] = PLANES) -> Dict[str, StandardizerModel]:
    exams = list(iter_exams(dataset_root, split, exam_ids))
    return {
        plane: fit_standardizer((e[plane] for e in exams), plane, dataset_id=f"{Path(dataset_root).name}/{split}")
        for plane in planes
    }


def stratified_holdout(labels: Mapping[str, LabelVector], frac: float, seed: int):
    """Split exam ids into (train, holdout), stratified on the full label vector."""
    if not 0.0 < frac < 1.0:
        raise ValueError("holdout fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    strata: Dict[tuple, List[str]] = {}
    for exam_id in sorted(labels):
        strata.setdefault(tuple(labels[exam_id]), []).append(exam_id)
    hold = []
    for key in sorted(strata):
        ids = strata[key]
        k = int(round(frac * len(ids)))
        hold.extend(ids[i] for i in rng.permutation(len(ids))[:k])
    hold_set = set(hold)
    return sorted(i for i in labels if i not in hold_set), sorted(hold_set)


def labeled_volumes(exams, labels: Mapping[str, LabelVector], plane: str, task: str) -> List[LabeledVolume]:
    return [LabeledVolume(e.exam_id, e[plane], labels[e.exam_id].for_task(task)) for e in exams]


def train_one(train_exams, valid_exams, labels, valid_labels, plane: str, task: str, family: str,
              config: TrainConfig, standardizer: StandardizerModel, ckpt_dir, init: str = "random"):
    """Train a single view model and write its checkpoint directory."""
    start = time.perf_counter()
    model = build_view_model(BackboneSpec(family, init, config.seed), plane, task)
    model, history = train_view_model(
        model,
        labeled_volumes(train_exams, labels, plane, task),
        labeled_volumes(valid_exams, valid_labels, plane, task),
        standardizer,
        config,
    )
    ckpt_dir = Path(ckpt_dir)
    save_checkpoint(model, ckpt_dir)
    standardizer.save(ckpt_dir / "standardizer.json")
    history.save_csv(ckpt_dir / "history.csv")
    logger.info("trained %s/%s in %.1fs: %d epochs, best epoch %d (%.4f)", task, plane,
                time.perf_counter() - start, len(history), history.best_epoch, model.provenance["best_metric"])
    return model, history


def train_views(
    dataset_root,
    ckpt_root,
    family: str,
    config: TrainConfig,
    standardizers: Mapping[str, StandardizerModel],
    train_ids: Sequence[str],
    valid_ids: Sequence[str],
    valid_split: str = "train",
    init: str = "random",
    planes: Sequence[str] = PLANES,
    tasks: Sequence[str] = TASKS,
) -> Dict[str, Dict[str, Path]]:
    """Train one model per (task, plane) into ``<ckpt_root>/<task>/<plane>/``."""
    labels = load_labels(dataset_root, "train")
    valid_labels = labels if valid_split == "train" else load_labels(dataset_root, valid_split)
    train_exams = [load_exam(dataset_root, "train", i) for i in sorted(train_ids)]
    valid_exams = [load_exam(dataset_root, valid_split, i) for i in sorted(valid_ids)]
    out: Dict[str, Dict[str, Path]] = {}
    for task in tasks:
        for plane in planes:
            ckpt = Path(ckpt_root) / task / plane
            train_one(train_exams, valid_exams, labels, valid_labels, plane, task, family, config,
                      standardizers[plane], ckpt, init)
            out.setdefault(task, {})[plane] = ckpt
    return out


def load_view_checkpoints(ckpt_root):
    """Returns ({task: {plane: ViewModel}}, {plane: StandardizerModel}) for every complete task."""
    models: Dict[str, Dict[str, ViewModel]] = {}
    standardizers: Dict[str, StandardizerModel] = {}
    for task in TASKS:
        dirs = {p: Path(ckpt_root) / task / p for p in PLANES}
        if not all((d / "manifest.json").is_file() for d in dirs.values()):
            continue
        models[task] = {p: load_checkpoint(d) for p, d in dirs.items()}
        for p, d in dirs.items():
            std = StandardizerModel.load(d / "standardizer.json")
            if p in standardizers and standardizers[p] != std:
                raise ValueError(f"checkpoints under {ckpt_root} disagree on the {p} standardizer")
            standardizers[p] = std
    if not models:
        raise FileNotFoundError(f"no complete task checkpoint set (3 planes) under {ckpt_root}")
    return models, standardizers


def checkpoint_hashes(models: Mapping[str, Mapping[str, ViewModel]]) -> List[str]:
    return sorted({str(m.provenance.get("config_hash")) for by_plane in models.values() for m in by_plane.values()})


def predict_split(models, standardizers, dataset_root, split: str,
                  fusions: Optional[Mapping[str, FusionModel]] = None, exam_ids=None):
    """Rows of (ViewProbTriple, fused prob or None), ordered by task then exam id."""
    exams = list(iter_exams(dataset_root, split, exam_ids))
    rows = []
    for task in TASKS:
        if task not in models:
            continue
        for exam in exams:
            triple = view_triple(models[task], exam, standardizers, task)
            fused = fuse(fusions[task], triple) if fusions and task in fusions else None
            rows.append((triple, fused))
    return rows


def fit_fusions(rows, labels: Mapping[str, LabelVector], **kw) -> Dict[str, FusionModel]:
    out = {}
    for task, task_rows in group_by_task(rows).items():
        triples = [t for t, _ in task_rows]
        out[task] = fit_fusion(triples, [labels[t.exam_id].for_task(task) for t in triples], task=task, **kw)
    return out


def evaluate_predictions(rows, labels: Mapping[str, LabelVector], model_name: str,
                         threshold: float = 0.5) -> List[MetricsRow]:
    """Multiview rows from the fused column, single-view rows from each plane's column."""
    out = []
    by_task = group_by_task(rows)
    for task in TASKS:
        if task not in by_task:
            continue
        task_rows = by_task[task]
        y = [labels[t.exam_id].for_task(task) for t, _ in task_rows]
        fused = [f for _, f in task_rows]
        if all(f is not None for f in fused):
            out.append(metrics_row(model_name, MULTIVIEW, TASK_CLASS[task], fused, threshold, y))
        for plane in PLANES:
            scores = [getattr(t, plane) for t, _ in task_rows]
            out.append(metrics_row(model_name, single_view_mode(plane), TASK_CLASS[task], scores, threshold, y))
    return out


# The tiny backbone starts from random weights, so the fine-tuning rate of
# 1e-4 leaves it near its initialisation within the epoch budget.
REPRO_LEARNING_RATE = 3e-3


def default_repro_train_config(seed: int, arch: str = "tiny") -> TrainConfig:
    if BackboneSpec(arch).family == "tiny":
        return TrainConfig(seed=seed, learning_rate=REPRO_LEARNING_RATE)
    return TrainConfig(seed=seed)


def repro_synthetic(out_dir, seed: int = 0, arch: str = "tiny", synth: Optional[SynthConfig] = None,
                    train: Optional[TrainConfig] = None, holdout_frac: float = 0.25, full: bool = False) -> Path:
    """Synthetic end-to-end run: data, standardizers, 9 models, 3 fusions, report.

    Fusion is fit on training-split predictions; metrics are computed on the
    generated test split (stored as ``valid``).
    """
    out_dir = Path(out_dir)
    synth = synth or SynthConfig(seed=seed)
    train = train or default_repro_train_config(seed, arch)
    family = BackboneSpec(arch).family
    pipeline_cfg = {"synth": synth.to_dict(), "train": train.to_dict(), "arch": family,
                    "holdout_frac": holdout_frac, "seed": seed}
    write_json(out_dir / "pipeline.json", {**pipeline_cfg, "config_hash": config_hash(pipeline_cfg)})

    data = out_dir / "data"
    generate_synthetic(synth, data)
    labels = load_labels(data, "train")
    standardizers = fit_plane_standardizers(data, "train")
    for plane, std in standardizers.items():
        std.save(out_dir / "standardizers" / f"{plane}.json")
    fit_ids, hold_ids = stratified_holdout(labels, holdout_frac, seed)
    train_views(data, out_dir / "checkpoints", family, train, standardizers, fit_ids, hold_ids, "train")

    models, standardizers = load_view_checkpoints(out_dir / "checkpoints")
    train_rows = predict_split(models, standardizers, data, "train")
    write_predictions(out_dir / "train_preds.csv", train_rows)
    fusions = fit_fusions(train_rows, labels)
    for task, fm in fusions.items():
        fm.save(out_dir / "fusion" / f"{task}.json")

    test_rows = predict_split(models, standardizers, data, "valid", fusions)
    write_predictions(out_dir / "test_preds.csv", test_rows)
    rows = evaluate_predictions(test_rows, load_labels(data, "valid"), DISPLAY_NAMES[family])
    atomic_write_text(out_dir / "report.md", render_report(rows, "markdown", full=full))
    atomic_write_text(out_dir / "report.csv", render_report(rows, "csv", full=True))
    return out_dir / "report.md"


def report_averages(report_csv) -> Dict[str, float]:
    """{view_mode: Average AUC} read back from a full CSV report."""
    out = {}
    with open(report_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            if r["class"] == "Average":
                out[r["view_mode"]] = float(r["auc"])
    return out
