"""4D volume domain type, standardization, and synthetic labeled datasets.

A ``Volume4D`` is a time series of 3-D voxel grids with spacing metadata,
stored as a float64 (T, H, W, D, 1) array. ``standardize`` maps arbitrary
inputs onto the model convention: center-crop or zero-pad each spatial axis
to the target cube, z-score intensities over nonzero voxels, and sample the
temporal axis down to a fixed frame count (order-preserving uniform subset).

Synthetic datasets plant class structure as fixed spatial blob templates
modulated by a smooth random temporal envelope plus Gaussian noise; they are
the desk-scale stand-in for task recordings and are fully determined by a
seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from voxswin import nifti


class InsufficientFramesError(ValueError):
    """Temporal axis shorter than the requested frame count."""


@dataclass
class Volume4D:
    data: np.ndarray  # (T, H, W, D, 1) float64
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tr_seconds: float = 1.0
    subject_id: str = ""
    label: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 4:
            self.data = self.data[..., np.newaxis]
        if self.data.ndim != 5 or self.data.shape[-1] != 1:
            raise ValueError(f"Volume4D needs (T, H, W, D, 1), got {self.data.shape}")
        if any(v <= 0 for v in self.voxel_size_mm) or self.tr_seconds <= 0:
            raise ValueError("voxel size and TR must be positive")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:4]

    def voxels(self) -> np.ndarray:
        """(T, H, W, D) view without the channel axis."""
        return self.data[..., 0]

    def with_data(self, voxels: np.ndarray) -> "Volume4D":
        arr = np.asarray(voxels, dtype=np.float64)
        if arr.ndim == 4:
            arr = arr[..., np.newaxis]
        return replace(self, data=arr)


def parse_nifti(raw: bytes) -> tuple[nifti.Nifti1Header, Volume4D]:
    """Decode single-file NIfTI-1 bytes into (header, Volume4D)."""
    header, arr = nifti.parse(raw)
    voxel = tuple(abs(p) or 1.0 for p in header.pixdim[1:4])
    tr = header.pixdim[4] if header.dim[0] == 4 and header.pixdim[4] > 0 else 1.0
    return header, Volume4D(arr, voxel_size_mm=voxel, tr_seconds=tr)


def load_nifti(path) -> tuple[nifti.Nifti1Header, Volume4D]:
    with open(path, "rb") as fh:
        return parse_nifti(fh.read())


def save_nifti(path, v: Volume4D) -> None:
    nifti.write_file(path, v.voxels(), voxel_size_mm=v.voxel_size_mm,
                     tr_seconds=v.tr_seconds)


# -- standardization ----------------------------------------------------------


def _crop_pad_axis(arr: np.ndarray, axis: int, target: int) -> np.ndarray:
    size = arr.shape[axis]
    if size > target:
        lo = (size - target) // 2
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(lo, lo + target)
        return arr[tuple(sl)]
    if size < target:
        lo = (target - size) // 2
        widths = [(0, 0)] * arr.ndim
        widths[axis] = (lo, target - size - lo)
        return np.pad(arr, widths)
    return arr


def zscore_nonzero(voxels: np.ndarray) -> np.ndarray:
    """z-score over nonzero voxels of the whole clip; all-zero clips pass through."""
    mask = voxels != 0
    if not mask.any():
        return voxels
    vals = voxels[mask]
    mu = vals.mean()
    sd = vals.std()
    if sd == 0.0:
        return voxels - mu * mask
    out = voxels.copy()
    out[mask] = (vals - mu) / sd
    return out


def sample_frames(n: int, target: int, rng: np.random.Generator) -> np.ndarray:
    """Order-preserving uniform random subset of ``target`` frame indices."""
    if n < target:
        raise InsufficientFramesError(f"need {target} frames, volume has {n}")
    if n == target:
        return np.arange(n)
    return np.sort(rng.choice(n, size=target, replace=False))


def standardize(v: Volume4D, target=(15, 96, 96, 96), normalize: bool = True,
                rng: np.random.Generator | None = None) -> Volume4D:
    """Map a volume onto the (T, cube, cube, cube) model convention.

    Spatial axes are center-cropped when larger and zero-padded symmetrically
    when smaller (extra voxel goes to the high side). The temporal axis is
    sampled down to ``target[0]`` frames when longer and errors when shorter;
    ``target[0] = None`` keeps all frames. Intensity normalization is a
    per-clip z-score over nonzero voxels.
    """
    t_target, h, w, d = target
    voxels = v.voxels()
    for axis, tgt in zip((1, 2, 3), (h, w, d)):
        voxels = _crop_pad_axis(voxels, axis, tgt)
    if t_target is not None and voxels.shape[0] != t_target:
        idx = sample_frames(voxels.shape[0], t_target,
                            rng if rng is not None else np.random.default_rng(0))
        voxels = voxels[idx]
    if normalize:
        voxels = zscore_nonzero(np.ascontiguousarray(voxels))
    return v.with_data(np.ascontiguousarray(voxels))


# -- synthetic datasets --------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_classes: int = 5
    samples_per_class: int = 40
    grid: tuple[int, int, int, int] = (5, 24, 24, 24)  # (T, H, W, D)
    blob_count: int = 5
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_classes, self.samples_per_class, self.blob_count) < 1:
            raise ValueError("counts must be positive")
        if min(self.grid) < 1:
            raise ValueError("grid extents must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _class_template(shape: tuple[int, int, int], blob_count: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Sum of Gaussian blobs at random interior positions."""
    h, w, d = shape
    zz, yy, xx = np.meshgrid(np.arange(h), np.arange(w), np.arange(d), indexing="ij")
    template = np.zeros(shape)
    for _ in range(blob_count):
        center = rng.uniform([0.2 * h, 0.2 * w, 0.2 * d], [0.8 * h, 0.8 * w, 0.8 * d])
        sigma = rng.uniform(1.5, 3.0)
        amp = rng.uniform(0.8, 1.5)
        r2 = (zz - center[0]) ** 2 + (yy - center[1]) ** 2 + (xx - center[2]) ** 2
        template += amp * np.exp(-r2 / (2.0 * sigma * sigma))
    return template


def _temporal_envelope(t: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth positive modulation; keeps the spatial argmax frame-invariant."""
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    steps = np.arange(t) / max(t, 1)
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * freq * steps + phase)


def generate_synthetic(spec: SyntheticSpec) -> list[Volume4D]:
    """Deterministic labeled dataset with planted per-class blob structure."""
    root = np.random.SeedSequence(spec.seed)
    class_seeds, sample_seeds = root.spawn(2)
    class_rngs = [np.random.default_rng(s) for s in class_seeds.spawn(spec.n_classes)]
    sample_rngs = sample_seeds.spawn(spec.n_classes * spec.samples_per_class)

    t, h, w, d = spec.grid
    templates = [_class_template((h, w, d), spec.blob_count, r) for r in class_rngs]

    samples: list[Volume4D] = []
    for k in range(spec.n_classes):
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng(sample_rngs[k * spec.samples_per_class + i])
            env = _temporal_envelope(t, rng)
            voxels = templates[k][np.newaxis] * env[:, np.newaxis, np.newaxis, np.newaxis]
            if spec.noise_sigma > 0:
                voxels = voxels + rng.normal(0.0, spec.noise_sigma, size=voxels.shape)
            samples.append(Volume4D(np.ascontiguousarray(voxels),
                                    subject_id=f"synth{k:02d}_{i:03d}", label=k))
    return samples


def write_dataset(root_dir, samples: list[Volume4D], seed: int) -> str:
    """One directory per class, single-file NIfTI volumes, plus a manifest.

    Manifest: one line per sample, tab-separated ``relative_path label seed``.
    """
    os.makedirs(root_dir, exist_ok=True)
    lines = []
    for v in samples:
        if v.label is None:
            raise ValueError("dataset samples need labels")
        cls_dir = os.path.join(root_dir, f"class{v.label:02d}")
        os.makedirs(cls_dir, exist_ok=True)
        rel = os.path.join(f"class{v.label:02d}", f"{v.subject_id}.nii")
        save_nifti(os.path.join(root_dir, rel), v)
        lines.append(f"{rel}\t{v.label}\t{seed}")
    manifest = os.path.join(root_dir, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_dataset(root_dir) -> list[Volume4D]:
    """Read a dataset directory back through its manifest."""
    manifest = os.path.join(root_dir, "manifest.txt")
    samples = []
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rel, label, _seed = line.split("\t")
            _, v = load_nifti(os.path.join(root_dir, rel))
            name = os.path.splitext(os.path.basename(rel))[0]
            samples.append(replace(v, label=int(label), subject_id=name))
    return samples
