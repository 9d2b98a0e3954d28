"""Stochastic 4D augmentations and the two-view pair sampler.

Five strategies, applied in the fixed order
``striding -> affine -> smoothing -> noise -> masking``:

- temporal striding: 5 frames at random gaps drawn from {1, 2, 3}
- affine: one scale in [0.9, 1.1] plus per-axis rotations in [-10, +10]
  degrees, drawn once per clip, trilinear resampling, zero fill
- smoothing: per-frame 3-D Gaussian, kernel sigma drawn from the level's
  uniform range, truncated at 3 sigma and renormalized to sum 1
- noise: one sigma per call from the level's uniform range, i.i.d. Gaussian
- masking: exactly floor(0.2 * blocks) of the 4x4x4 spatial blocks zeroed
  across every frame

All draws flow from seeded generators; each op optionally appends
``(op, params)`` records to a draw log, which is also emitted through
``logging.debug``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from voxswin.volumes import Volume4D

log = logging.getLogger(__name__)

NOISE_RANGES = {"low": 0.1, "high": 0.5}
SMOOTH_RANGES = {"low": 0.5, "high": 2.0}
AFFINE_SCALE = (0.9, 1.1)
AFFINE_ROT_DEG = 10.0
MASK_FRACTION = 0.20
MASK_BLOCK = 4
STRIDE_GAPS = (1, 2, 3)
STRIDE_LENGTH = 5


@dataclass
class AugmentationSpec:
    """Which strategies run, at which level, from which seed."""

    noise: str = "off"       # off | low | high
    smoothing: str = "off"   # off | low | high
    affine: bool = False
    masking: bool = False
    striding: bool = False
    seed: int = 0

    def __post_init__(self):
        for name, value in (("noise", self.noise), ("smoothing", self.smoothing)):
            if value not in ("off", "low", "high"):
                raise ValueError(f"{name} level must be off/low/high, got {value!r}")

    @classmethod
    def pretrain_default(cls, seed: int = 0) -> "AugmentationSpec":
        """Best pretraining row: low noise + low smoothing + striding + masking."""
        return cls(noise="low", smoothing="low", striding=True, masking=True, seed=seed)

    @classmethod
    def finetune_default(cls, seed: int = 0) -> "AugmentationSpec":
        """Best fine-tuning row: low noise + low smoothing + affine."""
        return cls(noise="low", smoothing="low", affine=True, seed=seed)


def _record(draw_log, op, **params):
    if draw_log is not None:
        draw_log.append((op, params))
    if log.isEnabledFor(logging.DEBUG):
        log.debug("augment %s %s", op, params)


# -- noise ---------------------------------------------------------------------


def add_noise(v: Volume4D, level: str, rng: np.random.Generator,
              draw_log: list | None = None) -> Volume4D:
    if level not in NOISE_RANGES:
        raise ValueError(f"noise level must be low/high, got {level!r}")
    sigma = rng.uniform(0.0, NOISE_RANGES[level])
    _record(draw_log, "noise", sigma=sigma)
    if sigma == 0.0:
        return v
    return v.with_data(v.voxels() + rng.normal(0.0, sigma, size=v.voxels().shape))


# -- smoothing -------------------------------------------------------------------


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps truncated at 3 sigma.

    The center tap is set to 1 - sum(others) after normalization, so a
    constant signal convolves to itself bit-exactly.
    """
    radius = int(np.ceil(3.0 * sigma))
    if sigma <= 0 or radius == 0:
        return np.array([1.0])
    offsets = np.arange(-radius, radius + 1)
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    taps /= taps.sum()
    taps[radius] = 1.0 - (taps.sum() - taps[radius])
    return taps


def _smooth_axis(vox: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Separable pass written as x + sum_j k_j (shift_j(x) - x), reflect boundary."""
    radius = len(taps) // 2
    if radius == 0:
        return vox
    widths = [(0, 0)] * vox.ndim
    widths[axis] = (radius, radius)
    padded = np.pad(vox, widths, mode="reflect")
    out = vox.copy()
    n = vox.shape[axis]
    for j in range(-radius, radius + 1):
        if j == 0:
            continue
        sl = [slice(None)] * vox.ndim
        sl[axis] = slice(radius + j, radius + j + n)
        out += taps[radius + j] * (padded[tuple(sl)] - vox)
    return out


def smooth(v: Volume4D, level: str, rng: np.random.Generator,
           draw_log: list | None = None) -> Volume4D:
    """Spatial-only Gaussian smoothing; no blurring across time."""
    if level not in SMOOTH_RANGES:
        raise ValueError(f"smoothing level must be low/high, got {level!r}")
    sigma = rng.uniform(0.0, SMOOTH_RANGES[level])
    _record(draw_log, "smoothing", sigma=sigma)
    taps = gaussian_taps(sigma)
    if len(taps) == 1:
        return v
    vox = v.voxels().copy()
    for axis in (1, 2, 3):
        vox = _smooth_axis(vox, taps, axis)
    return v.with_data(vox)


# -- affine ----------------------------------------------------------------------


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """R = Rz @ Ry @ Rx over the (H, W, D) axes, angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def affine_transform(v: Volume4D, rng: np.random.Generator,
                     draw_log: list | None = None) -> Volume4D:
    """Scale + rotate about the volume center; one draw applied to every frame.

    Pull-back convention: the drawn (scale, rotation) map output coordinates
    onto input coordinates, so a feature at offset r from center lands at
    R^T r / s. The draw ranges are symmetric, so the transform distribution
    is the same either way.
    """
    scale = rng.uniform(*AFFINE_SCALE)
    angles = np.deg2rad(rng.uniform(-AFFINE_ROT_DEG, AFFINE_ROT_DEG, size=3))
    _record(draw_log, "affine", scale=scale, rot_deg=tuple(np.rad2deg(angles)))
    sampling = scale * rotation_matrix(*angles)
    vox = v.voxels()
    center = (np.array(vox.shape[1:]) - 1) / 2.0
    offset = center - sampling @ center
    out = np.empty_like(vox)
    for t in range(vox.shape[0]):
        out[t] = ndimage.affine_transform(vox[t], sampling, offset=offset, order=1,
                                          mode="constant", cval=0.0, prefilter=False)
    return v.with_data(out)


# -- masking ---------------------------------------------------------------------


def random_mask(v: Volume4D, rng: np.random.Generator,
                draw_log: list | None = None) -> Volume4D:
    """Zero a fixed 20% of the 4x4x4 spatial blocks across all frames."""
    h, w, d = v.spatial_shape
    b = MASK_BLOCK
    if h % b or w % b or d % b:
        raise ValueError(f"spatial extents {v.spatial_shape} not divisible by {b}")
    nh, nw, nd = h // b, w // b, d // b
    n_blocks = nh * nw * nd
    n_masked = int(MASK_FRACTION * n_blocks)
    chosen = rng.choice(n_blocks, size=n_masked, replace=False)
    _record(draw_log, "masking", blocks=n_masked, total=n_blocks)
    block_mask = np.ones(n_blocks, dtype=bool)
    block_mask[chosen] = False
    keep = np.repeat(np.repeat(np.repeat(
        block_mask.reshape(nh, nw, nd), b, axis=0), b, axis=1), b, axis=2)
    return v.with_data(v.voxels() * keep[np.newaxis].astype(np.float64))


# -- temporal striding -----------------------------------------------------------


def stride_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """Five strictly increasing 0-based indices with gaps drawn from {1,2,3}."""
    worst = 1 + (STRIDE_LENGTH - 1) * max(STRIDE_GAPS)
    if n < worst:
        raise ValueError(f"temporal striding needs >= {worst} frames, got {n}")
    gaps = rng.choice(STRIDE_GAPS, size=STRIDE_LENGTH - 1, replace=True)
    span = int(gaps.sum())
    start = int(rng.integers(0, n - span))
    return start + np.concatenate([[0], np.cumsum(gaps)])


def temporal_stride(v: Volume4D, rng: np.random.Generator,
                    draw_log: list | None = None) -> Volume4D:
    idx = stride_indices(v.frames, rng)
    _record(draw_log, "striding", indices=tuple(int(i) for i in idx))
    return v.with_data(np.ascontiguousarray(v.voxels()[idx]))


# -- pair sampler ----------------------------------------------------------------


def apply_view(v: Volume4D, spec: AugmentationSpec, rng: np.random.Generator,
               draw_log: list | None = None) -> Volume4D:
    """One augmentation draw in the fixed application order."""
    if spec.striding:
        v = temporal_stride(v, rng, draw_log)
    if spec.affine:
        v = affine_transform(v, rng, draw_log)
    if spec.smoothing != "off":
        v = smooth(v, spec.smoothing, rng, draw_log)
    if spec.noise != "off":
        v = add_noise(v, spec.noise, rng, draw_log)
    if spec.masking:
        v = random_mask(v, rng, draw_log)
    return v


def make_pair(v: Volume4D, spec: AugmentationSpec,
              seeds: tuple[int, int] | None = None,
              draw_log: list | None = None) -> tuple[Volume4D, Volume4D]:
    """Two independent augmentation draws of the same source sample."""
    if seeds is None:
        s1, s2 = np.random.SeedSequence(spec.seed).spawn(2)
    else:
        s1, s2 = seeds
    view1 = apply_view(v, spec, np.random.default_rng(s1), draw_log)
    view2 = apply_view(v, spec, np.random.default_rng(s2), draw_log)
    return view1, view2
