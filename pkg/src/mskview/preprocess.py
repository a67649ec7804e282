"""Percentile-landmark intensity standardization and per-slice encoder input prep."""
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ._io import FORMAT_VERSION, read_json, write_json
from .errors import DegenerateHistogram, EmptySlice, PlaneMismatch
from .exams import SliceStack, check_plane

DEFAULT_PERCENTILES = (1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0)
INPUT_SIZE = 224
# single grey-level statistics (channel mean of the ImageNet values) so the
# three replicated channels stay identical after normalisation
INPUT_MEAN = 0.449
INPUT_STD = 0.226
_DITHER_SEED = 0x5EED
LANDMARK_METHOD = "inverted_cdf"


def _check_percentiles(percentiles) -> Tuple[float, ...]:
    pcs = tuple(float(p) for p in percentiles)
    if len(pcs) < 2:
        raise ValueError("need at least two percentiles")
    if any(not 0.0 < p < 100.0 for p in pcs):
        raise ValueError(f"percentiles must lie in (0, 100), got {pcs}")
    if any(b <= a for a, b in zip(pcs, pcs[1:])):
        raise ValueError(f"percentiles must be strictly increasing, got {pcs}")
    return pcs


def _strictly_increasing(x: np.ndarray) -> bool:
    return bool(np.all(np.diff(x) > 0))


def volume_landmarks(data: np.ndarray, percentiles: Sequence[float]) -> np.ndarray:
    """Percentile intensities of the foreground (> 0) voxels.

    Percentiles are order statistics of the empirical CDF, so any monotone
    intensity map carries a volume's landmarks onto the mapped landmarks
    exactly; this makes refitting on a standardized cohort a fixed point.
    Byte-identical slices enter once. Landmarks that tie because a single
    grey level carries a large share of the foreground are separated by
    re-estimating on a dequantised copy (uniform dither of half a grey
    level, fixed seed).
    """
    fg = np.asarray(data, dtype=np.float64)
    if fg.ndim == 3 and fg.shape[0] > 1:
        # a repeated slice is the same tissue, counted once
        fg = np.unique(fg.reshape(fg.shape[0], -1), axis=0)
    fg = fg[fg > 0]
    if fg.size == 0:
        raise DegenerateHistogram("volume has no foreground voxels")
    if np.ptp(fg) == 0:
        raise DegenerateHistogram(f"volume has a single foreground intensity ({fg[0]:g})")
    marks = np.percentile(fg, percentiles, method=LANDMARK_METHOD)
    if _strictly_increasing(marks):
        return marks
    dither = np.random.default_rng(_DITHER_SEED).uniform(-0.5, 0.5, size=fg.size)
    marks = np.percentile(fg + dither, percentiles, method=LANDMARK_METHOD)
    if not _strictly_increasing(marks):
        raise DegenerateHistogram(f"landmarks not strictly increasing after tie perturbation: {marks}")
    return marks


@dataclass(frozen=True)
class StandardizerModel:
    plane: str
    percentiles: Tuple[float, ...]
    standard_landmarks: Tuple[float, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        check_plane(self.plane)
        _check_percentiles(self.percentiles)
        if len(self.standard_landmarks) != len(self.percentiles):
            raise ValueError("percentiles and standard_landmarks differ in length")
        if not _strictly_increasing(np.asarray(self.standard_landmarks)):
            raise ValueError("standard_landmarks must be strictly increasing")

    @property
    def standard_range(self) -> Tuple[float, float]:
        return self.standard_landmarks[0], self.standard_landmarks[-1]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "plane": self.plane,
            "percentiles": list(self.percentiles),
            "standard_landmarks": list(self.standard_landmarks),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d) -> "StandardizerModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported standardizer format_version {d.get('format_version')}")
        return cls(d["plane"], tuple(d["percentiles"]), tuple(d["standard_landmarks"]), d.get("provenance", {}))

    def save(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "StandardizerModel":
        return cls.from_dict(read_json(path))


def fit_standardizer(
    training_volumes: Iterable[SliceStack],
    plane: str,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    dataset_id: str = "",
) -> StandardizerModel:
    """Average the per-volume foreground landmarks of one plane's training cohort."""
    check_plane(plane)
    pcs = _check_percentiles(percentiles)
    rows = []
    for vol in training_volumes:
        if vol.plane != plane:
            raise PlaneMismatch(f"fit for {plane} received a {vol.plane} volume")
        rows.append(volume_landmarks(vol.data, pcs))
    if not rows:
        raise ValueError(f"no {plane} training volumes supplied")
    standard = np.mean(rows, axis=0)
    return StandardizerModel(
        plane, pcs, tuple(float(v) for v in standard), {"dataset": dataset_id, "n_exams": len(rows)}
    )


def apply_standardizer(model: StandardizerModel, volume: SliceStack) -> SliceStack:
    """Map foreground intensities piecewise-linearly onto the standard scale.

    Beyond the outer landmarks the map would extrapolate and then be clipped
    to the standard range, which is exactly what ``np.interp`` clamping does
    for increasing landmark sets. Background (0) stays 0.
    """
    if volume.plane != model.plane:
        raise PlaneMismatch(f"standardizer for {model.plane} applied to a {volume.plane} volume")
    data = np.asarray(volume.data, dtype=np.float64)
    marks = volume_landmarks(data, model.percentiles)
    out = np.zeros_like(data)
    fg = data > 0
    out[fg] = np.interp(data[fg], marks, np.asarray(model.standard_landmarks))
    return volume.with_data(out)


def _normalise(x: torch.Tensor, lo: float, hi: float) -> torch.Tensor:
    x = (x.clamp(lo, hi) - lo) / (hi - lo)
    return (x - INPUT_MEAN) / INPUT_STD


def _resize(x: torch.Tensor, size: int) -> torch.Tensor:
    # x: N x 1 x H x W
    if x.shape[-2:] == (size, size):
        return x
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


def prepare_stack(data, standard_range: Tuple[float, float], size: int = INPUT_SIZE) -> torch.Tensor:
    """Standardized S x H x W stack -> float32 tensor S x 3 x size x size.

    The three channels are an expanded view of one grey channel.
    """
    lo, hi = (float(v) for v in standard_range)
    if not lo < hi:
        raise ValueError(f"standard range needs lo < hi, got {standard_range}")
    x = torch.as_tensor(np.asarray(data, dtype=np.float32))
    if x.ndim != 3 or x.numel() == 0:
        raise EmptySlice(f"cannot prepare an empty or non 3-D stack of shape {tuple(x.shape)}")
    x = _normalise(_resize(x[:, None], size), lo, hi)
    return x.expand(-1, 3, -1, -1)


def prepare_slice(slice2d, standard_range: Tuple[float, float], size: int = INPUT_SIZE) -> np.ndarray:
    """One standardized 2-D slice -> 3 x size x size float32 array."""
    arr = np.asarray(slice2d)
    if arr.ndim != 2 or arr.size == 0:
        raise EmptySlice(f"expected a non-empty 2-D slice, got shape {arr.shape}")
    return prepare_stack(arr[None], standard_range, size)[0].numpy().copy()


def normalised_bounds() -> Tuple[float, float]:
    """Encoder input values of the standard range's low and high ends."""
    return -INPUT_MEAN / INPUT_STD, (1.0 - INPUT_MEAN) / INPUT_STD
