"""The five augmentation strategies and the two-view pair sampler.

Run: python demos/03_augmentation_tour.py
"""

import numpy as np

from voxswin import augment as aug
from voxswin.augment import AugmentationSpec
from voxswin.volumes import Volume4D

rng = np.random.default_rng(0)
frames = np.arange(15.0)[:, None, None, None] * np.ones((15, 16, 16, 16))
v = Volume4D(frames + 0.1 * rng.standard_normal(frames.shape))

print("== temporal striding: 5 frames, gaps drawn from {1,2,3} ==")
for seed in range(3):
    idx = aug.stride_indices(v.frames, np.random.default_rng(seed))
    print(f"  seed {seed}: indices {list(idx)}  gaps {list(np.diff(idx))}")

print("\n== additive noise: sigma drawn per call ==")
draw_log = []
out = aug.add_noise(v, "low", np.random.default_rng(3), draw_log)
sigma = draw_log[0][1]["sigma"]
emp = (out.voxels() - v.voxels()).std()
print(f"  drawn sigma {sigma:.4f}, empirical residual std {emp:.4f}")

print("\n== smoothing: normalized kernel, constants fixed bit-exactly ==")
taps = aug.gaussian_taps(1.0)
print("  sigma=1 taps:", taps.round(4), " sum:", taps.sum())
const = Volume4D(np.full((2, 12, 12, 12), 3.0))
smoothed = aug.smooth(const, "high", np.random.default_rng(4))
print("  constant volume unchanged:", np.array_equal(smoothed.data, const.data))

print("\n== affine: one draw per clip, scale 0.9..1.1, rotations +-10 deg ==")
draw_log = []
aug.affine_transform(v, np.random.default_rng(5), draw_log)
print("  drawn:", {k: np.round(val, 3) for k, val in draw_log[0][1].items()})

print("\n== masking: exactly floor(20%) of 4^3 blocks, all frames ==")
big = Volume4D(np.abs(rng.standard_normal((2, 96, 96, 96))) + 0.5)
masked = aug.random_mask(big, np.random.default_rng(6))
zero_frac = float((masked.voxels()[0] == 0).mean())
print(f"  zeroed voxel fraction: {zero_frac:.6f} (= 2764/13824 = {2764 / 13824:.6f})")

print("\n== two-view pair for contrastive training ==")
spec = AugmentationSpec(noise="low", smoothing="low", striding=True, masking=True,
                        seed=11)
log = []
v1, v2 = aug.make_pair(v, spec, draw_log=log)
print("  view shapes:", v1.data.shape, v2.data.shape)
print("  ops applied per view:", [op for op, _ in log][:5])
print("  views differ:", not np.array_equal(v1.data, v2.data))
