"""Late fusion of the three per-view probabilities with L2-penalised logistic regression."""
import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ._io import FORMAT_VERSION, atomic_write_text, read_json, write_json
from .errors import NonConvergence, SingleClassSplit, TaskMismatch
from .exams import PLANES, Exam, check_task
from .preprocess import StandardizerModel
from .viewnet import ViewModel, predict_view, sigmoid

logger = logging.getLogger(__name__)

FEATURE_MODES = ("prob", "logit")
DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-9
MAX_ITER = 1000
PRED_COLUMNS = ("exam_id", "task", "p_axial", "p_coronal", "p_sagittal", "p_fused")


class ViewProbTriple(NamedTuple):
    exam_id: str
    task: str
    axial: float
    coronal: float
    sagittal: float

    @property
    def probs(self) -> Tuple[float, float, float]:
        return self.axial, self.coronal, self.sagittal


def triple_features(triples: Sequence[ViewProbTriple], mode: str = "prob") -> np.ndarray:
    x = np.array([t.probs for t in triples], dtype=np.float64).reshape(-1, 3)
    if mode == "logit":
        x = np.clip(x, 1e-7, 1 - 1e-7)
        x = np.log(x) - np.log1p(-x)
    elif mode != "prob":
        raise ValueError(f"feature mode must be one of {FEATURE_MODES}")
    return x


def log_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    """Mean negative log-likelihood of a logistic model (no penalty)."""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_logistic(X, y, l2_lambda: float = DEFAULT_L2, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER):
    """Damped Newton minimisation of mean NLL + l2/2 * |w|^2 (bias unpenalised).

    Starts from all zeros. Returns ``(weights, bias, n_iter, grad_norm)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("features and labels are not aligned")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be non-negative")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == n:
        raise SingleClassSplit(f"fusion labels hold a single class (positives={n_pos}, n={n})")

    A = np.hstack([X, np.ones((n, 1))])
    penalty = np.full(d + 1, l2_lambda)
    penalty[-1] = 0.0
    theta = np.zeros(d + 1)

    def objective(t):
        z = A @ t
        return np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(penalty * t * t)

    f = objective(theta)
    gnorm = np.inf
    for it in range(max_iter + 1):
        p = sigmoid(A @ theta)
        grad = A.T @ (p - y) / n + penalty * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return theta[:-1].copy(), float(theta[-1]), it, gnorm
        if it == max_iter:
            break
        hess = (A.T * (p * (1.0 - p))) @ A / n + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if gnorm < 1e-6:
            # inside the quadratic basin the full step is taken; the objective
            # change there is below float resolution
            theta = theta - step
            f = objective(theta)
            continue
        # backtracking on the Armijo condition
        t, slope = 1.0, float(grad @ step)
        while True:
            cand = theta - t * step
            f_new = objective(cand)
            if f_new <= f - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and f_new >= f:
            break
        theta, f = cand, f_new
    raise NonConvergence(f"logistic fit stopped with gradient norm {gnorm:.3e} > tol {tol:.1e}")


@dataclass(frozen=True)
class FusionModel:
    task: str
    weights: Tuple[float, float, float]  # axial, coronal, sagittal
    bias: float
    l2_lambda: float = DEFAULT_L2
    feature_mode: str = "prob"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        check_task(self.task)
        if len(self.weights) != 3:
            raise ValueError("fusion needs exactly three weights")
        if not np.all(np.isfinite(list(self.weights) + [self.bias])):
            raise ValueError("fusion parameters must be finite")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "feature_order": list(PLANES),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "l2_lambda": self.l2_lambda,
            "feature_mode": self.feature_mode,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d) -> "FusionModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported fusion format_version {d.get('format_version')}")
        if tuple(d.get("feature_order", PLANES)) != PLANES:
            raise ValueError(f"fusion weights must be ordered {PLANES}")
        return cls(d["task"], tuple(d["weights"]), d["bias"], d.get("l2_lambda", DEFAULT_L2),
                   d.get("feature_mode", "prob"), d.get("provenance", {}))

    def save(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "FusionModel":
        return cls.from_dict(read_json(path))

    def logits(self, triples: Sequence[ViewProbTriple]) -> np.ndarray:
        return triple_features(triples, self.feature_mode) @ np.asarray(self.weights) + self.bias


def fit_fusion(
    triples: Sequence[ViewProbTriple],
    labels: Sequence[int],
    l2_lambda: float = DEFAULT_L2,
    tol: float = DEFAULT_TOL,
    feature_mode: str = "prob",
    task: Optional[str] = None,
) -> FusionModel:
    triples = list(triples)
    if len(triples) != len(labels):
        raise ValueError(f"{len(triples)} triples but {len(labels)} labels")
    tasks = {t.task for t in triples}
    if task is None:
        if len(tasks) != 1:
            raise TaskMismatch(f"triples span tasks {sorted(tasks)}")
        task = tasks.pop()
    elif tasks - {task}:
        raise TaskMismatch(f"fit for {task} received triples for {sorted(tasks - {task})}")
    X = triple_features(triples, feature_mode)
    w, b, n_iter, gnorm = fit_logistic(X, labels, l2_lambda, tol)
    logger.info("fusion %s: converged in %d Newton steps (|grad| %.2e)", task, n_iter, gnorm)
    prov = {"n_exams": len(triples), "n_iter": n_iter, "grad_norm": gnorm}
    return FusionModel(task, tuple(float(v) for v in w), b, l2_lambda, feature_mode, prov)


def fuse(model: FusionModel, triple: ViewProbTriple) -> float:
    if triple.task != model.task:
        raise TaskMismatch(f"fusion model for {model.task} applied to a {triple.task} triple")
    return float(sigmoid(model.logits([triple])[0]))


class FusedPrediction(NamedTuple):
    task: str
    prob: float
    triple: ViewProbTriple


def view_triple(
    view_models: Mapping[str, ViewModel], exam: Exam, standardizers: Mapping[str, StandardizerModel], task: str
) -> ViewProbTriple:
    probs = {}
    for plane in PLANES:
        model = view_models[plane]
        if model.task != task:
            raise TaskMismatch(f"{plane} model is for {model.task}, expected {task}")
        probs[plane] = predict_view(model, exam[plane], standardizers[plane])
    return ViewProbTriple(exam.exam_id, task, probs["axial"], probs["coronal"], probs["sagittal"])


def predict_exam(
    view_models: Mapping[str, ViewModel], fusion: FusionModel, exam: Exam, standardizers: Mapping[str, StandardizerModel]
) -> FusedPrediction:
    triple = view_triple(view_models, exam, standardizers, fusion.task)
    return FusedPrediction(fusion.task, fuse(fusion, triple), triple)


# -- prediction CSV -----------------------------------------------------------


def predictions_to_csv(rows: Sequence[Tuple[ViewProbTriple, Optional[float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRED_COLUMNS)
    for triple, fused in rows:
        w.writerow([triple.exam_id, triple.task, *(repr(float(p)) for p in triple.probs),
                    "" if fused is None else repr(float(fused))])
    return buf.getvalue()


def write_predictions(path, rows) -> None:
    atomic_write_text(path, predictions_to_csv(rows))


def read_predictions(path) -> List[Tuple[ViewProbTriple, Optional[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PRED_COLUMNS:
            raise ValueError(f"{path}: expected columns {PRED_COLUMNS}, got {reader.fieldnames}")
        out = []
        for r in reader:
            triple = ViewProbTriple(r["exam_id"], r["task"], float(r["p_axial"]), float(r["p_coronal"]), float(r["p_sagittal"]))
            out.append((triple, float(r["p_fused"]) if r["p_fused"] else None))
    return out


def group_by_task(rows) -> Dict[str, list]:
    out: Dict[str, list] = {}
    for triple, fused in rows:
        out.setdefault(triple.task, []).append((triple, fused))
    return out
