"""Per-(plane, task) classifier: slice encoder, slice aggregation, logistic head."""
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
import torchvision

from ._io import FORMAT_VERSION, atomic_write_bytes, read_json, write_json
from .errors import PlaneMismatch, UnknownFamily, WeightsUnavailable
from .exams import SliceStack, check_plane, check_task
from .preprocess import StandardizerModel, apply_standardizer, prepare_stack

FEATURE_DIMS = {"alexnet": 256, "resnet18": 512, "googlenet": 1024, "tiny": 16}
IMAGENET_FAMILIES = ("alexnet", "resnet18", "googlenet")
AGGREGATIONS = ("max", "mean")
CACHE_ENV = "MSKVIEW_CACHE"


def canonical_family(family: str) -> str:
    name = family.lower().replace("_", "-")
    if name.endswith("-style"):
        name = name[: -len("-style")]
    name = {"resnet-18": "resnet18", "alex": "alexnet"}.get(name, name)
    if name not in FEATURE_DIMS:
        raise UnknownFamily(f"unknown backbone family {family!r}; choose from {sorted(FEATURE_DIMS)}")
    return name


def weights_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "mskview"))


@dataclass(frozen=True)
class BackboneSpec:
    """``init`` is ``"pretrained"`` (ImageNet weights from the local cache) or ``"random"``."""

    family: str
    init: str = "random"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.init not in ("pretrained", "random"):
            raise ValueError(f"init must be 'pretrained' or 'random', got {self.init!r}")
        if self.init == "pretrained" and self.family not in IMAGENET_FAMILIES:
            raise WeightsUnavailable(f"no pretrained weights exist for the {self.family} family")

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIMS[self.family]


class TinyEncoder(nn.Sequential):
    """Three strided conv blocks; fast enough for CPU tests at 224 px."""

    def __init__(self, width: int = 16):
        super().__init__(
            nn.Conv2d(3, 8, kernel_size=5, stride=4, padding=2),
            nn.ReLU(inplace=False),
            nn.Conv2d(8, width, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=False),
            nn.Conv2d(width, width, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=False),
        )
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(m.bias)


def _torchvision_model(family: str):
    if family == "alexnet":
        return torchvision.models.alexnet(weights=None)
    if family == "resnet18":
        return torchvision.models.resnet18(weights=None)
    # auxiliary branches are not part of the fine-tuned model
    return torchvision.models.googlenet(weights=None, aux_logits=False, init_weights=True, transform_input=False)


def _load_pretrained(model: nn.Module, family: str) -> None:
    path = weights_cache_dir() / f"{family}.pth"
    if not path.is_file():
        raise WeightsUnavailable(
            f"pretrained {family} weights not found at {path}; save a torchvision ImageNet "
            f"state_dict there or set {CACHE_ENV}"
        )
    state = torch.load(path, map_location="cpu", weights_only=True)
    state = {k: v for k, v in state.items() if not k.startswith(("aux1.", "aux2."))}
    model.load_state_dict(state)


def _encoder_from(model: nn.Module, family: str) -> nn.Module:
    if family == "alexnet":
        return model.features
    if family == "resnet18":
        return nn.Sequential(
            model.conv1, model.bn1, model.relu, model.maxpool,
            model.layer1, model.layer2, model.layer3, model.layer4,
        )
    return nn.Sequential(
        model.conv1, model.maxpool1, model.conv2, model.conv3, model.maxpool2,
        model.inception3a, model.inception3b, model.maxpool3,
        model.inception4a, model.inception4b, model.inception4c, model.inception4d, model.inception4e,
        model.maxpool4, model.inception5a, model.inception5b,
    )


def build_encoder(spec: BackboneSpec) -> nn.Module:
    if spec.family == "tiny":
        return TinyEncoder(FEATURE_DIMS["tiny"])
    model = _torchvision_model(spec.family)
    if spec.init == "pretrained":
        _load_pretrained(model, spec.family)
    return _encoder_from(model, spec.family)


def aggregate_features(features, mode: str = "max"):
    """Collapse an S x D feature matrix to a D vector (element-wise max or mean)."""
    if mode not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if isinstance(features, torch.Tensor):
        return features.amax(dim=0) if mode == "max" else features.mean(dim=0)
    arr = np.asarray(features)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"expected an S x D matrix with S >= 1, got {arr.shape}")
    return arr.max(axis=0) if mode == "max" else arr.mean(axis=0)


class ViewModel(nn.Module):
    def __init__(self, spec: BackboneSpec, plane: str, task: str, aggregation: str = "max"):
        super().__init__()
        if aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        self.spec = spec
        self.plane = check_plane(plane)
        self.task = check_task(task)
        self.aggregation = aggregation
        self.encoder = build_encoder(spec)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(spec.feature_dim, 1)
        nn.init.normal_(self.head.weight, std=0.01)
        nn.init.zeros_(self.head.bias)
        self.provenance = {"config_hash": None, "epochs_trained": 0, "best_metric": None}

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """N x 3 x H x W -> N x feature_dim."""
        return self.pool(self.encoder(x)).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Prepared slice stack -> scalar logit."""
        feats = self.encode(x)
        return self.head(aggregate_features(feats, self.aggregation)).squeeze(-1)

    def logit_per_slice(self, x: torch.Tensor) -> torch.Tensor:
        """Batch-independent inference: each slice is encoded on its own."""
        feats = torch.cat([self.encode(x[i : i + 1]) for i in range(x.shape[0])])
        return self.head(aggregate_features(feats, self.aggregation)).squeeze(-1)


def build_view_model(spec: BackboneSpec, plane: str, task: str, aggregation: str = "max") -> ViewModel:
    """Construct a model with every parameter trainable; random parts seeded by ``spec.seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.seed)
        model = ViewModel(spec, plane, task, aggregation)
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def parameter_checksum(model: nn.Module) -> float:
    with torch.no_grad():
        return float(sum(p.double().abs().sum() + p.double().sum() for p in model.parameters()))


def encode_slices(model: ViewModel, prepared: Sequence) -> np.ndarray:
    """Per-slice features, S x feature_dim, each row computed independently."""
    if isinstance(prepared, torch.Tensor):
        x = prepared
    else:
        x = torch.as_tensor(np.stack([np.asarray(p, dtype=np.float32) for p in prepared]))
    if x.shape[0] < 1:
        raise ValueError("need at least one prepared slice")
    model.eval()
    with torch.no_grad():
        feats = torch.cat([model.encode(x[i : i + 1]) for i in range(x.shape[0])])
    out = feats.double().numpy()
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("encoder produced non-finite features")
    return out


def prepare_for_model(stack: SliceStack, standardizer: StandardizerModel) -> torch.Tensor:
    std = apply_standardizer(standardizer, stack)
    return prepare_stack(std.data, standardizer.standard_range)


def view_logit(model: ViewModel, prepared: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        return float(model.logit_per_slice(prepared))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def predict_view(model: ViewModel, exam_volume: SliceStack, standardizer: StandardizerModel) -> float:
    """Probability of the model's task from one plane's stack; never augments."""
    if not (model.plane == exam_volume.plane == standardizer.plane):
        raise PlaneMismatch(
            f"model plane {model.plane}, volume plane {exam_volume.plane}, standardizer plane {standardizer.plane}"
        )
    return float(sigmoid(view_logit(model, prepare_for_model(exam_volume, standardizer))))


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(model: ViewModel, ckpt_dir, extra: Optional[dict] = None) -> Path:
    ckpt_dir = Path(ckpt_dir)
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    atomic_write_bytes(ckpt_dir / "weights.pt", buf.getvalue())
    manifest = {
        "format_version": FORMAT_VERSION,
        "family": model.spec.family,
        "init": model.spec.init,
        "seed": model.spec.seed,
        "plane": model.plane,
        "task": model.task,
        "feature_dim": model.feature_dim,
        "aggregation": model.aggregation,
        "config_hash": model.provenance.get("config_hash"),
        "epochs_trained": model.provenance.get("epochs_trained"),
        "best_metric": model.provenance.get("best_metric"),
    }
    manifest.update(extra or {})
    write_json(ckpt_dir / "manifest.json", manifest)
    return ckpt_dir


def load_checkpoint(ckpt_dir) -> ViewModel:
    ckpt_dir = Path(ckpt_dir)
    manifest = read_json(ckpt_dir / "manifest.json")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {manifest.get('format_version')}")
    # weights come from the blob, so no pretrained artifact is needed here
    spec = BackboneSpec(manifest["family"], "random", manifest.get("seed", 0))
    model = build_view_model(spec, manifest["plane"], manifest["task"], manifest.get("aggregation", "max"))
    state = torch.load(ckpt_dir / "weights.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.spec = BackboneSpec(manifest["family"], manifest.get("init", "random"), manifest.get("seed", 0))
    model.provenance = {
        "config_hash": manifest.get("config_hash"),
        "epochs_trained": manifest.get("epochs_trained"),
        "best_metric": manifest.get("best_metric"),
    }
    model.eval()
    return model
