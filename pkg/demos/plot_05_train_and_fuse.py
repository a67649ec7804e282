"""
Three views, one fused prediction
=================================

Train the ACL model for each plane on a phantom cohort, fit the fusion
regression on training predictions and score the held-out exams.
"""

import logging
import tempfile
from pathlib import Path

from mskview.exams import PLANES, SynthConfig, generate_synthetic, iter_exams, load_labels
from mskview.fusion import fit_fusion, predict_exam, view_triple
from mskview.metrics import roc_auc
from mskview.pipeline import fit_plane_standardizers, labeled_volumes, stratified_holdout
from mskview.trainer import TrainConfig, train_view_model
from mskview.viewnet import BackboneSpec, build_view_model

logging.basicConfig(level=logging.INFO, format="%(message)s")

root = Path(tempfile.mkdtemp()) / "knee"
generate_synthetic(SynthConfig(n_train=32, n_test=16, image_size=64, seed=2), root)
labels = load_labels(root, "train")
train_ids, hold_ids = stratified_holdout(labels, 0.25, seed=0)
exams = {e.exam_id: e for e in iter_exams(root, "train")}
stds = fit_plane_standardizers(root, "train")

# %%
# One model per plane; early stopping watches the held-out quarter.
config = TrainConfig(learning_rate=3e-3, max_epochs=12, early_stop_patience=4)
models = {}
for plane in PLANES:
    fit = labeled_volumes([exams[i] for i in train_ids], labels, plane, "acl")
    hold = labeled_volumes([exams[i] for i in hold_ids], labels, plane, "acl")
    model = build_view_model(BackboneSpec("tiny", seed=0), plane, "acl")
    models[plane], history = train_view_model(model, fit, hold, stds[plane], config)
    print(plane, "best epoch", history.best_epoch, "of", len(history))

# %%
# Fusion weights: the sagittal view should carry most of the signal.
triples = [view_triple(models, e, stds, "acl") for e in exams.values()]
fusion = fit_fusion(triples, [labels[t.exam_id].acl for t in triples])
print(dict(zip(PLANES, [round(w, 2) for w in fusion.weights])), round(fusion.bias, 2))

# %%
# Held-out AUC per view and fused.
test = list(iter_exams(root, "valid"))
y = [load_labels(root, "valid")[e.exam_id].acl for e in test]
preds = [predict_exam(models, fusion, e, stds) for e in test]
for i, plane in enumerate(PLANES):
    print(plane, round(roc_auc([p.triple.probs[i] for p in preds], y), 3))
print("fused", round(roc_auc([p.prob for p in preds], y), 3))
