"""Training-time geometric augmentation, one shared transform per exam."""
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotation_range_deg: Tuple[float, float] = (-25.0, 25.0)
    shift_range_px: Tuple[int, int] = (-25, 25)
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        lo, hi = self.rotation_range_deg
        if lo != -hi or hi < 0:
            raise ValueError(f"rotation range must be symmetric, got {self.rotation_range_deg}")
        lo, hi = self.shift_range_px
        if lo != -hi or hi < 0 or int(hi) != hi:
            raise ValueError(f"shift range must be symmetric integers, got {self.shift_range_px}")
        object.__setattr__(self, "rotation_range_deg", (float(self.rotation_range_deg[0]), float(self.rotation_range_deg[1])))
        object.__setattr__(self, "shift_range_px", (int(self.shift_range_px[0]), int(self.shift_range_px[1])))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rotation_range_deg"] = list(self.rotation_range_deg)
        d["shift_range_px"] = list(self.shift_range_px)
        return d

    @classmethod
    def from_dict(cls, d) -> "AugmentConfig":
        d = dict(d)
        for key in ("rotation_range_deg", "shift_range_px"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    angle_deg: float = 0.0
    shift_x_px: int = 0
    shift_y_px: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle_deg == 0.0 and self.shift_x_px == 0 and self.shift_y_px == 0


IDENTITY = AugmentParams()


def sample_augmentation(config: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw one transform. Always consumes the same number of draws when enabled."""
    if not config.enabled:
        return IDENTITY
    flip = bool(rng.random() < config.flip_prob)
    angle = float(rng.uniform(*config.rotation_range_deg))
    lo, hi = config.shift_range_px
    sx, sy = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    return AugmentParams(flip, angle, sx, sy)


def _shift(stack: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation with zero fill; +dx moves content right, +dy down."""
    out = np.zeros_like(stack)
    h, w = stack.shape[-2:]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_y, dst_x] = stack[..., src_y, src_x]
    return out


def apply_augmentation(stack: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Flip, rotate about the slice centre (bilinear) and translate every slice alike.

    ``stack`` is S x H x W; the shape is preserved and uncovered pixels are 0.
    """
    out = np.asarray(stack)
    if out.ndim != 3 or out.shape[0] < 1:
        raise ValueError(f"expected a non-empty S x H x W stack, got {out.shape}")
    if params.is_identity:
        return out.copy()
    if params.flip:
        out = out[:, :, ::-1]
    if params.angle_deg != 0.0:
        out = ndimage.rotate(out, params.angle_deg, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    if params.shift_x_px or params.shift_y_px:
        out = _shift(out, params.shift_x_px, params.shift_y_px)
    return np.ascontiguousarray(out)
