"""Fine-tuning of one view model: AdamW, augmentation, early stopping."""
import copy
import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ._io import atomic_write_text, config_hash
from .augment import AugmentConfig, apply_augmentation, sample_augmentation
from .errors import EmptySplit, NonFiniteLoss, PlaneMismatch, SingleClassSet, SingleClassSplit
from .exams import SliceStack
from .metrics import roc_auc
from .preprocess import StandardizerModel, apply_standardizer, prepare_stack
from .viewnet import ViewModel

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    max_epochs: int = 50
    early_stop_patience: int = 5
    batch: int = 1
    pos_weight_mode: str = "none"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    monitor: str = "valid_auc"

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if not 0 < self.early_stop_patience < self.max_epochs:
            raise ValueError("early_stop_patience must lie in [1, max_epochs)")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.pos_weight_mode not in ("none", "inverse-prevalence"):
            raise ValueError(f"unknown pos_weight_mode {self.pos_weight_mode!r}")
        if self.monitor not in ("valid_auc", "valid_loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def digest(self, family: str = "") -> str:
        return config_hash({"train": self.to_dict(), "family": family})


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    valid_loss: List[float] = field(default_factory=list)
    valid_auc: List[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss", "valid_auc"])
        for i, row in enumerate(zip(self.train_loss, self.valid_loss, self.valid_auc), start=1):
            w.writerow([i, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def save_csv(self, path):
        return atomic_write_text(path, self.to_csv())


class LabeledVolume(NamedTuple):
    exam_id: str
    stack: SliceStack
    label: int


class EarlyStopping:
    """Tracks the best monitored value; stop after ``patience`` epochs without improvement.

    ``tiebreak`` (lower is better) decides between epochs whose monitored
    value is equal, e.g. validation loss once validation AUC saturates at 1.
    """

    def __init__(self, patience: int, mode: str = "max"):
        self.patience = patience
        self.sign = 1.0 if mode == "max" else -1.0
        self.best = (-math.inf, -math.inf)
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float, tiebreak: float = math.inf) -> bool:
        key = (self.sign * value, -tiebreak)
        if not math.isnan(key[0]) and key > self.best:
            self.best, self.best_epoch, self.bad_epochs = key, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def weighted_bce(prob, label, pos_weight=1.0):
    """-(w * y * log p + (1 - y) * log(1 - p)) with p clamped to [1e-7, 1 - 1e-7]."""
    if isinstance(prob, torch.Tensor):
        p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
        return -(pos_weight * label * torch.log(p) + (1 - label) * torch.log1p(-p))
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    loss = -(pos_weight * label * np.log(p) + (1 - label) * np.log1p(-p))
    return float(loss) if np.ndim(loss) == 0 else loss


def weighted_bce_logits(logit: torch.Tensor, label, pos_weight=1.0) -> torch.Tensor:
    """Same loss as :func:`weighted_bce` written on the logit, without clamping."""
    return pos_weight * label * F.softplus(-logit) + (1 - label) * F.softplus(logit)


def compute_pos_weight(labels: Sequence[int], mode: str = "inverse-prevalence") -> float:
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassSplit(f"training labels hold a single class (positives={n_pos}, negatives={n_neg})")
    if mode == "none":
        return 1.0
    if mode == "inverse-prevalence":
        return n_neg / n_pos
    raise ValueError(f"unknown pos_weight_mode {mode!r}")


def build_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    """Adam with decoupled weight decay (shrinkage applied outside the gradient)."""
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def _check_split(name: str, items: Sequence[LabeledVolume], plane: str) -> None:
    if not items:
        raise EmptySplit(f"{name} split is empty")
    for item in items:
        if item.stack.plane != plane:
            raise PlaneMismatch(f"{name} exam {item.exam_id} holds a {item.stack.plane} stack, model expects {plane}")
        if item.label not in (0, 1):
            raise ValueError(f"{name} exam {item.exam_id} has non-binary label {item.label}")


def evaluate_split(model: ViewModel, prepared: Sequence[torch.Tensor], labels: Sequence[int], pos_weight: float = 1.0):
    """Mean loss, AUC (nan if single-class) and per-exam probabilities."""
    model.eval()
    logits = []
    with torch.no_grad():
        for x in prepared:
            logits.append(float(model.logit_per_slice(x)))
    z = torch.tensor(logits, dtype=torch.float64)
    y = torch.tensor(labels, dtype=torch.float64)
    loss = float(weighted_bce_logits(z, y, pos_weight).mean())
    probs = torch.sigmoid(z).numpy()
    try:
        auc = roc_auc(probs, np.asarray(labels))
    except SingleClassSet:
        auc = float("nan")
    return loss, auc, probs


def train_view_model(
    model: ViewModel,
    train_set: Sequence[LabeledVolume],
    valid_set: Sequence[LabeledVolume],
    standardizer: StandardizerModel,
    config: Optional[TrainConfig] = None,
):
    """Fine-tune every parameter of ``model``; returns (model at best epoch, history).

    One optimiser step per ``config.batch`` exams (gradient accumulation);
    the epoch order and augmentation draws come from ``config.seed``.
    """
    config = config or TrainConfig()
    _check_split("train", train_set, model.plane)
    _check_split("valid", valid_set, model.plane)
    if standardizer.plane != model.plane:
        raise PlaneMismatch(f"standardizer plane {standardizer.plane} differs from model plane {model.plane}")
    pos_weight = compute_pos_weight([it.label for it in train_set], config.pos_weight_mode)

    lo_hi = standardizer.standard_range

    def standardized(item):
        return apply_standardizer(standardizer, item.stack).data.astype(np.float32)

    valid_prep = [prepare_stack(standardized(it), lo_hi) for it in valid_set]
    valid_labels = [it.label for it in valid_set]
    # without augmentation the inputs never change, so prepare them once;
    # with it, standardize per step to keep only the raw uint8 stacks in memory
    train_prep = None if config.augment.enabled else [prepare_stack(standardized(it), lo_hi) for it in train_set]

    monitor = config.monitor
    if monitor == "valid_auc" and len(set(valid_labels)) < 2:
        logger.warning("validation split holds one class; monitoring valid_loss instead of valid_auc")
        monitor = "valid_loss"
    stopper = EarlyStopping(config.early_stop_patience, "max" if monitor == "valid_auc" else "min")

    rng = np.random.default_rng(config.seed)
    optimizer = build_optimizer(model.parameters(), config)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            order = rng.permutation(len(train_set))
            total = 0.0
            optimizer.zero_grad()
            for step, idx in enumerate(order, start=1):
                item = train_set[idx]
                if train_prep is not None:
                    x = train_prep[idx]
                else:
                    params = sample_augmentation(config.augment, rng)
                    x = prepare_stack(apply_augmentation(standardized(item), params), lo_hi)
                loss = weighted_bce_logits(model(x), float(item.label), pos_weight)
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(f"non-finite loss {loss.item()} on exam {item.exam_id} at epoch {epoch}")
                (loss / config.batch).backward()
                total += loss.item()
                if step % config.batch == 0 or step == len(order):
                    optimizer.step()
                    optimizer.zero_grad()

            valid_loss, valid_auc, _ = evaluate_split(model, valid_prep, valid_labels, pos_weight)
            history.train_loss.append(total / len(order))
            history.valid_loss.append(valid_loss)
            history.valid_auc.append(valid_auc)
            value = valid_auc if monitor == "valid_auc" else valid_loss
            if stopper.update(epoch, value, valid_loss):
                best_state = copy.deepcopy(model.state_dict())
            logger.debug(
                "%s/%s epoch %d train_loss %.4f valid_loss %.4f valid_auc %.4f",
                model.plane, model.task, epoch, history.train_loss[-1], valid_loss, valid_auc,
            )
            if stopper.should_stop:
                history.stopped_early = epoch < config.max_epochs
                break

    history.best_epoch = stopper.best_epoch or len(history)
    model.load_state_dict(best_state)
    model.eval()
    best_metric = (history.valid_auc if monitor == "valid_auc" else history.valid_loss)[history.best_epoch - 1]
    model.provenance = {
        "config_hash": config.digest(model.spec.family),
        "epochs_trained": len(history),
        "best_metric": float(best_metric),
        "monitor": monitor,
    }
    return model, history
