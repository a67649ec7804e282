"""MRNet-layout exam store and a synthetic multi-view dataset generator.

On disk a dataset looks like::

    <root>/<split>/<plane>/<exam_id>.npy      uint8 array, S x H x W
    <root>/<split>-abnormal.csv               headerless "exam_id,label"
    <root>/<split>-acl.csv
    <root>/<split>-meniscus.csv
"""
import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .errors import CorruptArray, IoFailure, LabelMismatch, MissingPlane, NonBinaryLabel

logger = logging.getLogger(__name__)

PLANES = ("axial", "coronal", "sagittal")
TASKS = ("abnormal", "acl", "meniscus")
SPLITS = ("train", "valid")
NATIVE_SIZE = 256


def check_plane(plane: str) -> str:
    if plane not in PLANES:
        raise ValueError(f"unknown plane {plane!r}; expected one of {PLANES}")
    return plane


def check_task(task: str) -> str:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    return task


@dataclass(frozen=True, eq=False)
class SliceStack:
    """One plane's volume. ``data`` is S x H x W."""

    data: np.ndarray
    plane: str

    def __post_init__(self):
        check_plane(self.plane)
        if self.data.ndim != 3 or self.data.shape[0] < 1 or min(self.data.shape) < 1:
            raise ValueError(f"{self.plane} stack must be a non-empty S x H x W array, got {self.data.shape}")

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]

    def with_data(self, data) -> "SliceStack":
        return SliceStack(data, self.plane)


@dataclass(frozen=True, eq=False)
class Exam:
    exam_id: str
    volumes: Dict[str, SliceStack]

    def __post_init__(self):
        if set(self.volumes) != set(PLANES):
            raise ValueError(f"exam {self.exam_id} must hold exactly the planes {PLANES}, got {sorted(self.volumes)}")
        for plane, stack in self.volumes.items():
            if stack.plane != plane:
                raise ValueError(f"exam {self.exam_id}: stack stored under {plane} is tagged {stack.plane}")

    def __getitem__(self, plane: str) -> SliceStack:
        return self.volumes[plane]


class LabelVector(NamedTuple):
    abnormal: int
    acl: int
    meniscus: int

    def for_task(self, task: str) -> int:
        return getattr(self, check_task(task))


@dataclass(frozen=True)
class DatasetStats:
    n_exams: int
    n_abnormal: int
    n_acl: int
    n_meniscus: int
    n_both_acl_meniscus: int
    # plane -> (min, median, max) slice count; empty when no volumes were scanned
    slice_counts: Dict[str, Tuple[int, float, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slice_counts"] = {k: list(v) for k, v in self.slice_counts.items()}
        return d


def _default_visibility():
    return {"abnormal": ["axial"], "acl": ["sagittal"], "meniscus": ["coronal"]}


@dataclass
class SynthConfig:
    """Parameters of the synthetic knee-like phantom dataset.

    ``prevalence["abnormal"]`` is the rate of *extra* abnormal-only exams; the
    abnormal label is the OR of that draw and both tear labels.
    """

    n_train: int = 48
    n_test: int = 40
    image_size: int = 96
    slices_range: Tuple[int, int] = (4, 8)
    contrast: Dict[str, float] = field(default_factory=lambda: {t: 80.0 for t in TASKS})
    visibility: Dict[str, List[str]] = field(default_factory=_default_visibility)
    prevalence: Dict[str, float] = field(default_factory=lambda: {"abnormal": 0.3, "acl": 0.35, "meniscus": 0.35})
    noise_sd: float = 6.0
    seed: int = 0

    def __post_init__(self):
        self.slices_range = tuple(int(v) for v in self.slices_range)
        lo, hi = self.slices_range
        if lo < 1 or hi < lo:
            raise ValueError(f"slices_range must satisfy 1 <= min <= max, got {self.slices_range}")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("exam counts must be non-negative")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16 pixels")
        for task in TASKS:
            p = self.prevalence.get(task)
            if p is None or not 0.0 <= p <= 1.0:
                raise ValueError(f"prevalence for {task} must lie in [0, 1], got {p}")
            c = self.contrast.get(task)
            if c is None or not 0.0 < c <= 255.0:
                raise ValueError(f"lesion contrast for {task} must lie in (0, 255], got {c}")
            for plane in self.visibility.get(task, ()):
                check_plane(plane)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slices_range"] = list(self.slices_range)
        return d


# -- reading -----------------------------------------------------------------


def volume_path(root, split: str, plane: str, exam_id: str) -> Path:
    return Path(root) / split / plane / f"{exam_id}.npy"


def label_path(root, split: str, task: str) -> Path:
    return Path(root) / f"{split}-{task}.csv"


def _load_array(path: Path, plane: str) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise MissingPlane(f"{plane}: missing volume file {path}") from None
    except (ValueError, OSError, EOFError) as exc:
        raise CorruptArray(f"{plane}: cannot read {path}: {exc}") from exc
    if arr.ndim != 3 or 0 in arr.shape:
        raise CorruptArray(f"{plane}: {path} has shape {arr.shape}, expected S x H x W with S >= 1")
    if arr.dtype != np.uint8:
        raise CorruptArray(f"{plane}: {path} has dtype {arr.dtype}, expected uint8")
    return arr


def load_stack(dataset_root, split: str, plane: str, exam_id: str, expected_size: Optional[int] = None) -> SliceStack:
    """Load one plane of one exam."""
    path = volume_path(dataset_root, split, plane, exam_id)
    if not path.is_file():
        raise MissingPlane(f"{plane}: missing volume file {path}")
    arr = _load_array(path, plane)
    if expected_size is not None and arr.shape[1:] != (expected_size, expected_size):
        raise CorruptArray(f"{plane}: {path} has slices {arr.shape[1:]}, expected {expected_size}x{expected_size}")
    return SliceStack(arr, plane)


def load_exam(dataset_root, split: str, exam_id: str, expected_size: Optional[int] = None) -> Exam:
    """Load the three plane stacks of one exam.

    ``expected_size`` enforces H = W (use ``NATIVE_SIZE`` for MRNet data).
    """
    return Exam(exam_id, {p: load_stack(dataset_root, split, p, exam_id, expected_size) for p in PLANES})


def list_exam_ids(dataset_root, split: str) -> List[str]:
    """Exam ids present in any plane directory, sorted."""
    ids = set()
    for plane in PLANES:
        d = Path(dataset_root) / split / plane
        if d.is_dir():
            ids.update(p.stem for p in d.glob("*.npy"))
    return sorted(ids)


def iter_exams(dataset_root, split: str, exam_ids: Optional[Iterable[str]] = None) -> Iterator[Exam]:
    ids = list_exam_ids(dataset_root, split) if exam_ids is None else sorted(exam_ids)
    for exam_id in ids:
        yield load_exam(dataset_root, split, exam_id)


def read_label_csv(path) -> Dict[str, int]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read label file {path}: {exc}") from exc
    out = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise LabelMismatch(f"{path}:{lineno}: expected 'exam_id,label', got {row}")
        exam_id, raw = row[0].strip(), row[1].strip()
        if raw not in ("0", "1"):
            raise NonBinaryLabel(f"{path}:{lineno}: label {raw!r} for exam {exam_id} is not 0/1")
        if exam_id in out:
            raise LabelMismatch(f"{path}:{lineno}: duplicate exam id {exam_id}")
        out[exam_id] = int(raw)
    return out


def load_labels(dataset_root, split: str) -> Dict[str, LabelVector]:
    per_task = {task: read_label_csv(label_path(dataset_root, split, task)) for task in TASKS}
    all_ids = set().union(*per_task.values())
    for task, table in per_task.items():
        missing = sorted(all_ids - set(table))
        if missing:
            raise LabelMismatch(f"{split}-{task}.csv lacks exam id(s) {', '.join(missing[:10])} present in another task file")
    return {i: LabelVector(*(per_task[t][i] for t in TASKS)) for i in sorted(all_ids)}


def dataset_stats(labels: Mapping[str, LabelVector], exams: Iterable[Exam] = ()) -> DatasetStats:
    if not labels:
        raise ValueError("dataset_stats needs a non-empty label map")
    vals = np.array([tuple(v) for v in labels.values()], dtype=np.int64)
    counts = {p: [] for p in PLANES}
    for exam in exams:
        for plane in PLANES:
            counts[plane].append(exam[plane].n_slices)
    slice_counts = {
        p: (int(min(c)), float(np.median(c)), int(max(c))) for p, c in counts.items() if c
    }
    return DatasetStats(
        n_exams=len(vals),
        n_abnormal=int(vals[:, 0].sum()),
        n_acl=int(vals[:, 1].sum()),
        n_meniscus=int(vals[:, 2].sum()),
        n_both_acl_meniscus=int((vals[:, 1] & vals[:, 2]).sum()),
        slice_counts=slice_counts,
    )


def scan_dataset(dataset_root, splits=SPLITS) -> Dict[str, DatasetStats]:
    out = {}
    for split in splits:
        if not label_path(dataset_root, split, TASKS[0]).exists():
            continue
        labels = load_labels(dataset_root, split)
        out[split] = dataset_stats(labels, iter_exams(dataset_root, split, labels))
    return out


# -- writing -----------------------------------------------------------------


def write_volume(path, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr, dtype=np.uint8), allow_pickle=False)
    atomic_write_bytes(path, buf.getvalue())


def write_label_csvs(dataset_root, split: str, labels: Mapping[str, LabelVector]) -> None:
    for task in TASKS:
        lines = [f"{i},{labels[i].for_task(task)}\n" for i in sorted(labels)]
        atomic_write_text(label_path(dataset_root, split, task), "".join(lines))


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synth_volume(rng: np.random.Generator, config: SynthConfig, n_slices: int, lesions: Iterable[str]) -> np.ndarray:
    """Draw one plane's phantom, adding an ellipsoidal lesion per listed task."""
    size = config.image_size
    c = size / 2.0
    gain = rng.uniform(0.75, 1.25)
    ry, rx = rng.uniform(0.32, 0.44, size=2) * size
    body = _ellipse_mask(size, c, c, ry, rx)
    yy, xx = np.mgrid[:size, :size]
    # smooth in-plane shading: a tilted ramp of +-10 %
    theta = rng.uniform(0, 2 * np.pi)
    ramp = ((yy - c) * np.sin(theta) + (xx - c) * np.cos(theta)) / size
    tissue = 80.0 * (1.0 + 0.2 * ramp)
    vol = np.empty((n_slices, size, size), dtype=np.float64)
    vol[:] = tissue * gain
    vol += rng.normal(0.0, config.noise_sd, size=vol.shape)

    zz = np.arange(n_slices)[:, None, None]
    for task in lesions:
        cz = rng.uniform(0, n_slices - 1) if n_slices > 1 else 0.0
        rz = max(1.0, n_slices / 3.0)
        ly, lx = c + rng.uniform(-0.15, 0.15, size=2) * size
        sy, sx = rng.uniform(0.08, 0.12, size=2) * size
        blob = ((zz - cz) / rz) ** 2 + ((yy - ly) / sy) ** 2 + ((xx - lx) / sx) ** 2 <= 1.0
        vol[blob] += config.contrast[task]

    vol[:, ~body] = 0.0
    # keep every body voxel strictly foreground
    vol[:, body] = np.clip(vol[:, body], 1.0, 255.0)
    return np.rint(vol).astype(np.uint8)


def _draw_labels(rng: np.random.Generator, config: SynthConfig) -> Tuple[LabelVector, bool]:
    acl = int(rng.random() < config.prevalence["acl"])
    men = int(rng.random() < config.prevalence["meniscus"])
    extra = bool(rng.random() < config.prevalence["abnormal"])
    return LabelVector(int(extra or acl or men), acl, men), extra


def generate_synthetic(config: SynthConfig, out_root) -> DatasetStats:
    """Write a synthetic MRNet-layout dataset (train + valid) and return its stats.

    Tear lesions appear only in the planes of that task's visibility mask; the
    abnormal-only lesion is drawn for the independently sampled extra abnormal
    exams. Exam ids run consecutively across train then valid.
    """
    rng = np.random.default_rng(config.seed)
    out_root = Path(out_root)
    all_labels: Dict[str, LabelVector] = {}
    slice_counts = {p: [] for p in PLANES}
    next_id = 0
    try:
        for split, n in (("train", config.n_train), ("valid", config.n_test)):
            labels = {}
            for _ in range(n):
                exam_id = f"{next_id:04d}"
                next_id += 1
                lv, extra = _draw_labels(rng, config)
                labels[exam_id] = lv
                for plane in PLANES:
                    lesions = [t for t in ("acl", "meniscus") if lv.for_task(t) and plane in config.visibility.get(t, ())]
                    if extra and plane in config.visibility.get("abnormal", ()):
                        lesions.append("abnormal")
                    n_slices = int(rng.integers(config.slices_range[0], config.slices_range[1] + 1))
                    vol = synth_volume(rng, config, n_slices, lesions)
                    write_volume(volume_path(out_root, split, plane, exam_id), vol)
                    slice_counts[plane].append(n_slices)
            write_label_csvs(out_root, split, labels)
            all_labels.update(labels)
    except OSError as exc:
        raise IoFailure(f"cannot write synthetic dataset under {out_root}: {exc}") from exc
    logger.info("wrote %d synthetic exams to %s", len(all_labels), out_root)
    if not all_labels:
        return DatasetStats(0, 0, 0, 0, 0)
    stats = dataset_stats(all_labels)
    counts = {p: (int(min(c)), float(np.median(c)), int(max(c))) for p, c in slice_counts.items() if c}
    return DatasetStats(**{**stats.__dict__, "slice_counts": counts})
