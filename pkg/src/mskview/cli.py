"""``mskview`` command line: synth, stats, preprocess-fit, train, predict, fuse, evaluate, repro-synthetic.

Exit codes: 0 success, 1 domain error (error class name printed), 2 usage error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._io import FORMAT_VERSION, atomic_write_text, dump_json, read_json, write_json
from .errors import MixedConfigHash, MskviewError
from .exams import (
    PLANES, TASKS, SynthConfig, generate_synthetic, iter_exams, load_exam, load_labels, read_label_csv, scan_dataset,
)
from .fusion import FusionModel, fit_fusion, read_predictions, write_predictions
from .metrics import render_report
from .pipeline import (
    DISPLAY_NAMES, checkpoint_hashes, evaluate_predictions, load_view_checkpoints, predict_split,
    repro_synthetic, stratified_holdout, train_one,
)
from .preprocess import StandardizerModel, fit_standardizer
from .trainer import TrainConfig
from .viewnet import BackboneSpec


def _sidecar(path) -> Path:
    return Path(str(path) + ".manifest.json")


def cmd_synth(args):
    config = SynthConfig.from_dict(read_json(args.config)) if args.config else SynthConfig()
    stats = generate_synthetic(config, args.out)
    print(args.out)
    print(dump_json(stats.to_dict()), end="")


def cmd_stats(args):
    stats = scan_dataset(args.data)
    if not stats:
        raise FileNotFoundError(f"no label CSVs found under {args.data}")
    print(dump_json({split: s.to_dict() for split, s in stats.items()}), end="")


def cmd_preprocess_fit(args):
    model = fit_standardizer(
        (e[args.plane] for e in iter_exams(args.data, args.split)),
        args.plane,
        dataset_id=f"{Path(args.data).name}/{args.split}",
    )
    model.save(args.out)
    print(args.out)


def cmd_train(args):
    config = TrainConfig.from_dict(read_json(args.config)) if args.config else TrainConfig()
    family = BackboneSpec(args.arch).family
    if args.standardizer:
        standardizer = StandardizerModel.load(args.standardizer)
    else:
        standardizer = fit_standardizer(
            (e[args.plane] for e in iter_exams(args.data, "train")), args.plane, dataset_id=f"{Path(args.data).name}/train"
        )
    labels = load_labels(args.data, "train")
    if args.holdout_frac:
        train_ids, valid_ids = stratified_holdout(labels, args.holdout_frac, config.seed)
        valid_split, valid_labels = "train", labels
    else:
        valid_labels = load_labels(args.data, "valid")
        train_ids, valid_ids, valid_split = sorted(labels), sorted(valid_labels), "valid"
    train_exams = [load_exam(args.data, "train", i) for i in train_ids]
    valid_exams = [load_exam(args.data, valid_split, i) for i in valid_ids]
    train_one(train_exams, valid_exams, labels, valid_labels, args.plane, args.task, family, config,
              standardizer, args.out, init=args.init)
    print(args.out)


def cmd_predict(args):
    models, standardizers = load_view_checkpoints(args.ckpts)
    fusions = {}
    for path in args.fusion or ():
        fm = FusionModel.load(path)
        fusions[fm.task] = fm
    rows = predict_split(models, standardizers, args.data, args.split, fusions)
    write_predictions(args.out, rows)
    write_json(_sidecar(args.out), {
        "format_version": FORMAT_VERSION,
        "config_hashes": checkpoint_hashes(models),
        "families": sorted({m.spec.family for by_plane in models.values() for m in by_plane.values()}),
        "split": args.split,
        "fusion_tasks": sorted(fusions),
    })
    print(args.out)


def cmd_fuse(args):
    rows = read_predictions(args.train_preds)
    tasks = sorted({t.task for t, _ in rows})
    task = args.task or (tasks[0] if len(tasks) == 1 else None)
    if task is None:
        raise ValueError(f"{args.train_preds} holds tasks {tasks}; pass --task")
    labels = read_label_csv(args.labels)
    triples = [t for t, _ in rows if t.task == task]
    missing = [t.exam_id for t in triples if t.exam_id not in labels]
    if missing:
        raise KeyError(f"{args.labels} lacks exam ids {missing[:10]}")
    model = fit_fusion(triples, [labels[t.exam_id] for t in triples], l2_lambda=args.l2,
                       feature_mode=args.feature_mode, task=task)
    side = _sidecar(args.train_preds)
    if side.is_file():
        model.provenance["config_hashes"] = read_json(side).get("config_hashes", [])
    model.provenance["train_preds"] = Path(args.train_preds).name
    model.save(args.out)
    print(args.out)


def cmd_evaluate(args):
    rows = read_predictions(args.preds)
    side = _sidecar(args.preds)
    meta = read_json(side) if side.is_file() else {}
    hashes = meta.get("config_hashes", [])
    if len(hashes) > 1 and not args.allow_mixed:
        raise MixedConfigHash(f"{args.preds} mixes config hashes {hashes}; pass --allow-mixed to proceed")
    name = args.model_name
    if name is None:
        fams = meta.get("families", [])
        name = DISPLAY_NAMES.get(fams[0], fams[0]) if len(fams) == 1 else "model"
    metrics = evaluate_predictions(rows, load_labels(args.labels, args.split), name, args.threshold)
    atomic_write_text(args.out_report, render_report(metrics, args.format, full=args.full))
    print(args.out_report)


def cmd_repro(args):
    synth = SynthConfig.from_dict({**read_json(args.synth_config), "seed": args.seed}) if args.synth_config else None
    train = TrainConfig.from_dict({**read_json(args.train_config), "seed": args.seed}) if args.train_config else None
    report = repro_synthetic(args.out, seed=args.seed, arch=args.arch, synth=synth, train=train, full=args.full)
    print(report)
    print(report.with_suffix(".csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mskview", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"mskview {__version__} (format_version {FORMAT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic MRNet-layout dataset")
    p.add_argument("--config", help="SynthConfig JSON (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="label and slice-count summary of a dataset")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess-fit", help="fit one plane's intensity standardizer")
    p.add_argument("--data", required=True)
    p.add_argument("--plane", required=True, choices=PLANES)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess_fit)

    p = sub.add_parser("train", help="fine-tune one (plane, task) view model")
    p.add_argument("--data", required=True)
    p.add_argument("--plane", required=True, choices=PLANES)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--arch", required=True)
    p.add_argument("--config", help="TrainConfig JSON (defaults if omitted)")
    p.add_argument("--standardizer", help="standardizer JSON; fitted on the train split if omitted")
    p.add_argument("--init", default="random", choices=("random", "pretrained"))
    p.add_argument("--holdout-frac", type=float, default=None,
                   help="carve early-stopping exams from train instead of using the valid split")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-view (and fused) probabilities for a split")
    p.add_argument("--ckpts", required=True, help="directory holding <task>/<plane>/ checkpoints")
    p.add_argument("--fusion", nargs="*", help="fusion JSON file(s), one per task")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="valid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="fit a fusion logistic regression on training predictions")
    p.add_argument("--train-preds", required=True)
    p.add_argument("--labels", required=True, help="MRNet label CSV of the task")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--feature-mode", default="prob", choices=("prob", "logit"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="render the metrics report for a prediction CSV")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True, help="dataset root holding the label CSVs")
    p.add_argument("--split", default="valid")
    p.add_argument("--out-report", required=True)
    p.add_argument("--format", default="markdown", choices=("markdown", "csv"))
    p.add_argument("--model-name")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--full", action="store_true", help="emit every single-view plane row")
    p.add_argument("--allow-mixed", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("repro-synthetic", help="end-to-end synthetic run producing a report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", default="tiny")
    p.add_argument("--out", default="repro-synthetic")
    p.add_argument("--synth-config")
    p.add_argument("--train-config")
    p.add_argument("--full", action="store_true")
    p.set_defaults(func=cmd_repro)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MskviewError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
