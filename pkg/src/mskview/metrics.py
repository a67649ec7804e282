"""AUC / sensitivity / specificity / accuracy and the comparison report table."""
import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import InconsistentAverage, SingleClassSet, WrongRowSet

CLASS_NAMES = ("Abnormal", "ACL", "Meniscus")
AVERAGE = "Average"
TASK_CLASS = dict(zip(("abnormal", "acl", "meniscus"), CLASS_NAMES))
MULTIVIEW = "multiview"
DEFAULT_THRESHOLD = 0.5
AVERAGE_TOL = 5e-5
METRIC_FIELDS = ("auc", "sensitivity", "specificity", "accuracy")


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __init__(self, scores, labels):
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(labels).ravel()
        if s.shape != y.shape or s.size < 1:
            raise ValueError(f"scores and labels must be aligned and non-empty ({s.size} vs {y.size})")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int64))

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())


def _as_set(scored, labels=None) -> ScoredSet:
    return scored if isinstance(scored, ScoredSet) else ScoredSet(scored, labels)


def roc_auc(scored, labels=None) -> float:
    """Mann-Whitney AUC with half credit for ties.

    Uses mid-ranks, so ties between a positive and a negative score count 0.5.
    """
    ss = _as_set(scored, labels)
    n_pos, n_neg = ss.n_pos, ss.n_neg
    if n_pos == 0 or n_neg == 0:
        raise SingleClassSet(f"AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    ranks = rankdata(ss.scores, method="average")
    u = ranks[ss.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_at_threshold(scored, threshold: float = DEFAULT_THRESHOLD, labels=None) -> Tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with a positive call iff score >= threshold."""
    ss = _as_set(scored, labels)
    pred = ss.scores >= threshold
    pos = ss.labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


@dataclass(frozen=True)
class MetricsRow:
    model_name: str
    view_mode: str  # "multiview" or "single-view(<plane>)"
    class_name: str
    auc: float
    sensitivity: float
    specificity: float
    accuracy: float

    def __post_init__(self):
        if self.class_name not in CLASS_NAMES + (AVERAGE,):
            raise ValueError(f"unknown class name {self.class_name!r}")
        for name in METRIC_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def values(self) -> Tuple[float, float, float, float]:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)


def single_view_mode(plane: str) -> str:
    return f"single-view({plane})"


def summarize(scored, threshold: float = DEFAULT_THRESHOLD, labels=None) -> dict:
    ss = _as_set(scored, labels)
    auc = roc_auc(ss)
    tp, fp, tn, fn = confusion_at_threshold(ss, threshold)
    return {
        "auc": auc,
        "sensitivity": tp / (tp + fn),
        "specificity": tn / (tn + fp),
        "accuracy": (tp + tn) / ss.scores.size,
    }


def metrics_row(model_name: str, view_mode: str, class_name: str, scored, threshold=DEFAULT_THRESHOLD, labels=None) -> MetricsRow:
    return MetricsRow(model_name, view_mode, class_name, **summarize(scored, threshold, labels))


def macro_average(rows: Sequence[MetricsRow]) -> MetricsRow:
    """Unweighted mean of the Abnormal/ACL/Meniscus rows of one model and view mode."""
    rows = list(rows)
    if sorted(r.class_name for r in rows) != sorted(CLASS_NAMES):
        raise WrongRowSet(f"need exactly one row per class {CLASS_NAMES}, got {[r.class_name for r in rows]}")
    if len({(r.model_name, r.view_mode) for r in rows}) != 1:
        raise WrongRowSet("rows mix models or view modes")
    # fixed summation order keeps the mean permutation invariant bit for bit
    rows.sort(key=lambda r: CLASS_NAMES.index(r.class_name))
    means = {f: sum(getattr(r, f) for r in rows) / 3.0 for f in METRIC_FIELDS}
    return MetricsRow(rows[0].model_name, rows[0].view_mode, AVERAGE, **means)


def _groups(rows: Iterable[MetricsRow]):
    """Ordered {model: {view_mode: {class_name: row}}} by first appearance."""
    out = {}
    for r in rows:
        cls = out.setdefault(r.model_name, {}).setdefault(r.view_mode, {})
        if r.class_name in cls:
            raise WrongRowSet(f"duplicate row {r.model_name}/{r.view_mode}/{r.class_name}")
        cls[r.class_name] = r
    return out


def _check_average(given: MetricsRow, computed: MetricsRow) -> None:
    for f in METRIC_FIELDS:
        if abs(getattr(given, f) - getattr(computed, f)) > AVERAGE_TOL:
            raise InconsistentAverage(
                f"{given.model_name}/{given.view_mode}: stated {f} average {getattr(given, f):.4f} "
                f"differs from recomputed {getattr(computed, f):.6f}"
            )


def _display_name(model: str, view_mode: str) -> str:
    if view_mode == MULTIVIEW:
        return f"{model}-multiview"
    if view_mode.startswith("single-view(") and view_mode.endswith(")"):
        return f"{model}-single view ({view_mode[len('single-view('):-1]})"
    return f"{model}-{view_mode}"


def resolve_rows(rows: Iterable[MetricsRow], full: bool = False) -> List[Tuple[str, MetricsRow]]:
    """Order rows for display, recomputing (and checking) every Average.

    Multiview class rows and their Average come first for each model. Single
    view modes contribute only their best Average (by AUC) unless ``full``
    or the task set is partial, in which case every plane's rows are listed.
    """
    ordered = []
    for model, modes in _groups(rows).items():
        single = []
        for mode, by_class in modes.items():
            classes = {k: v for k, v in by_class.items() if k != AVERAGE}
            if len(classes) == len(CLASS_NAMES):
                avg = macro_average(classes.values())
                if AVERAGE in by_class:
                    _check_average(by_class[AVERAGE], avg)
            elif classes:
                # a partial task set has no Average
                if AVERAGE in by_class:
                    raise WrongRowSet(f"{model}/{mode}: Average given without all three class rows")
                avg = None
            elif AVERAGE in by_class:
                avg = by_class[AVERAGE]
            else:
                continue
            block = [classes[c] for c in CLASS_NAMES if c in classes] + ([avg] if avg else [])
            if mode == MULTIVIEW:
                ordered.extend((_display_name(model, mode), r) for r in block)
            else:
                single.append((mode, block))
        if not single:
            continue
        if full or any(block[-1].class_name != AVERAGE for _, block in single):
            for mode, block in single:
                ordered.extend((_display_name(model, mode), r) for r in block)
        else:
            mode, block = max(single, key=lambda mb: (mb[1][-1].auc, -list(modes).index(mb[0])))
            ordered.append((f"{model}-single view", block[-1]))
    return ordered


def render_report(rows: Iterable[MetricsRow], fmt: str = "markdown", full: bool = False) -> str:
    resolved = resolve_rows(rows, full=full)
    if fmt == "markdown":
        lines = [
            "| Deep Learning Model | Class | AUC | Sensitivity | Specificity | Accuracy |",
            "|---|---|---|---|---|---|",
        ]
        for name, r in resolved:
            lines.append(f"| {name} | {r.class_name} | " + " | ".join(f"{v:.4f}" for v in r.values) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "view_mode", "class", *METRIC_FIELDS])
        for _, r in resolved:
            w.writerow([r.model_name, r.view_mode, r.class_name, *(f"{v:.4f}" for v in r.values)])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")

