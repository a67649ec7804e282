"""Clinical reproduction on the MRNet release (not run in CI).

Needs the MRNet v1.0 arrays (``train/``, ``valid/`` and the six label CSVs)
and torchvision ImageNet weights saved as ``<cache>/<family>.pth``, e.g.::

    python -c "import torch, torchvision as tv; \
        torch.save(tv.models.resnet18(weights='DEFAULT').state_dict(), 'cache/resnet18.pth')"
    MSKVIEW_CACHE=cache python scripts/reproduce_mrnet.py --data MRNet-v1.0 --out mrnet-run

Protocol: per-plane standardizers fitted on train; nine view models per
family fine-tuned with the default TrainConfig, early stopping on the
shipped valid split (the same exams later used for testing, as in the
original evaluation; pass --holdout-frac for a clean protocol); fusion
fitted on train-split predictions; report rendered on the valid split.
Expect many CPU hours per family.
"""
import argparse
import logging
from pathlib import Path

from mskview.exams import NATIVE_SIZE, PLANES, TASKS, list_exam_ids, load_labels, load_stack
from mskview.fusion import write_predictions
from mskview.metrics import render_report
from mskview.pipeline import (
    DISPLAY_NAMES, fit_fusions, evaluate_predictions, load_view_checkpoints, predict_split, stratified_holdout,
)
from mskview.preprocess import fit_standardizer
from mskview.trainer import LabeledVolume, TrainConfig, train_view_model
from mskview.viewnet import BackboneSpec, build_view_model, save_checkpoint

log = logging.getLogger("reproduce_mrnet")


def plane_stacks(root, split, plane, ids):
    # one plane at a time keeps memory at the raw uint8 size
    return {i: load_stack(root, split, plane, i, NATIVE_SIZE) for i in ids}


def run_family(data: Path, out: Path, family: str, holdout_frac=None, seed=0):
    config = TrainConfig(seed=seed)
    train_labels = load_labels(data, "train")
    if holdout_frac:
        fit_ids, stop_ids = stratified_holdout(train_labels, holdout_frac, seed)
        stop_split, stop_labels = "train", train_labels
    else:
        fit_ids, stop_ids = list_exam_ids(data, "train"), list_exam_ids(data, "valid")
        stop_split, stop_labels = "valid", load_labels(data, "valid")
    ckpts = out / family / "checkpoints"
    for plane in PLANES:
        train = plane_stacks(data, "train", plane, fit_ids)
        stop = plane_stacks(data, stop_split, plane, stop_ids)
        std = fit_standardizer(train.values(), plane, dataset_id=f"{data.name}/train")
        for task in TASKS:
            ckpt = ckpts / task / plane
            if (ckpt / "manifest.json").is_file():
                log.info("skipping finished %s/%s", task, plane)
                continue
            model = build_view_model(BackboneSpec(family, "pretrained", seed), plane, task)
            model, history = train_view_model(
                model,
                [LabeledVolume(i, s, train_labels[i].for_task(task)) for i, s in train.items()],
                [LabeledVolume(i, s, stop_labels[i].for_task(task)) for i, s in stop.items()],
                std,
                config,
            )
            save_checkpoint(model, ckpt)
            std.save(ckpt / "standardizer.json")
            history.save_csv(ckpt / "history.csv")
        del train, stop

    models, stds = load_view_checkpoints(ckpts)
    train_rows = predict_split(models, stds, data, "train")
    write_predictions(out / family / "train_preds.csv", train_rows)
    fusions = fit_fusions(train_rows, train_labels)
    for task, fm in fusions.items():
        fm.save(out / family / "fusion" / f"{task}.json")
    test_rows = predict_split(models, stds, data, "valid", fusions)
    write_predictions(out / family / "valid_preds.csv", test_rows)
    return evaluate_predictions(test_rows, load_labels(data, "valid"), DISPLAY_NAMES[family])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--arch", nargs="+", default=["alexnet", "resnet18", "googlenet"])
    parser.add_argument("--holdout-frac", type=float)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    rows = []
    for family in args.arch:
        rows.extend(run_family(args.data, args.out, BackboneSpec(family).family, args.holdout_frac, args.seed))
        # rewrite after each family so a long run leaves partial results
        (args.out / "report.md").write_text(render_report(rows))
        (args.out / "report_full.csv").write_text(render_report(rows, "csv", full=True))
    print(args.out / "report.md")


if __name__ == "__main__":
    main()
