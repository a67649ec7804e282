"""
A view model and its invariances
================================

Build the small test backbone, encode a stack slice by slice and check that
the prediction ignores slice order and repeated slices.
"""

import numpy as np
import torch

from mskview.exams import SliceStack
from mskview.preprocess import fit_standardizer
from mskview.viewnet import BackboneSpec, build_view_model, encode_slices, predict_view, prepare_for_model

rng = np.random.default_rng(3)
vol = SliceStack(rng.integers(0, 200, size=(5, 64, 64)).astype(np.uint8), "sagittal")
std = fit_standardizer([vol], "sagittal")

model = build_view_model(BackboneSpec("tiny", seed=0), "sagittal", "acl")
with torch.no_grad():
    model.head.weight.normal_(0, 1)
print("feature_dim", model.feature_dim)

feats = encode_slices(model, prepare_for_model(vol, std))
print("features", feats.shape)

# %%
# Max pooling over slices makes the output independent of order, and a
# duplicated slice cannot raise any maximum.
p = predict_view(model, vol, std)
shuffled = vol.with_data(vol.data[rng.permutation(5)])
doubled = vol.with_data(np.concatenate([vol.data, vol.data[:1]]))
print(p, predict_view(model, shuffled, std) == p, predict_view(model, doubled, std) == p)

# %%
# The ImageNet families take their weights from a local cache
# (``$MSKVIEW_CACHE/<family>.pth``); random init works without it.
for family in ("alexnet", "resnet18", "googlenet"):
    print(family, BackboneSpec(family).feature_dim)
