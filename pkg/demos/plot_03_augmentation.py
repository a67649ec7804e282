"""
One transform per exam
======================

Draw flips, rotations and shifts, and apply one draw to a whole stack.
"""

import numpy as np

from mskview.augment import AugmentConfig, AugmentParams, apply_augmentation, sample_augmentation

rng = np.random.default_rng(0)
draws = [sample_augmentation(AugmentConfig(), rng) for _ in range(5000)]
print("flip rate", np.mean([d.flip for d in draws]))
print("angle range", min(d.angle_deg for d in draws), max(d.angle_deg for d in draws))

# %%
# A bright square in every slice moves identically.
stack = np.zeros((3, 48, 48))
stack[:, 10:20, 10:20] = 1.0
params = AugmentParams(flip=True, angle_deg=0.0, shift_x_px=5, shift_y_px=-3)
out = apply_augmentation(stack, params)
print([tuple(np.argwhere(s > 0.5).min(axis=0)) for s in out])

# %%
# Disabled augmentation is the identity.
print(sample_augmentation(AugmentConfig(enabled=False), rng))
