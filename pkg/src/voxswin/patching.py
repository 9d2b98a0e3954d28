"""Patch partition/embedding, patch merging, window partition and cyclic shift.

Feature grids are (B, T, H', W', D', C') tensors: the temporal axis is never
patched, spatial axes shrink by the patch size and then halve per merge while
channels double. Window partition tiles the spatial axes into M^3 blocks
(zero-padding up to multiples of M, with the padding recorded and maskable),
keeping all T frames inside each window record. Partition/reverse and
shift/unshift are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from voxswin import tensor as tt
from voxswin.tensor import ShapeError, Tensor


@dataclass
class PatchGrid:
    tensor: Tensor  # (B, T, H', W', D', C')
    patch_size: int
    stage: int = 0

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.tensor.shape[2:5]

    @property
    def channels(self) -> int:
        return self.tensor.shape[-1]

    @property
    def frames(self) -> int:
        return self.tensor.shape[1]


@dataclass
class WindowSet:
    windows: Tensor  # (B, nW, T, M, M, M, C')
    m: int
    grid_shape: tuple[int, int, int]  # unpadded (H', W', D')
    pad: tuple[int, int, int]
    shift: tuple[int, int, int]
    groups: np.ndarray | None  # (nW, M^3) int; -1 marks padded slots

    @property
    def n_windows(self) -> int:
        return self.windows.shape[1]

    @property
    def slots(self) -> int:
        """Window-time slots: T * ceil(H'/M) * ceil(W'/M) * ceil(D'/M)."""
        return self.windows.shape[2] * self.n_windows


def window_count(grid_shape, m: int) -> int:
    h, w, d = grid_shape
    return int(np.ceil(h / m) * np.ceil(w / m) * np.ceil(d / m))


# -- patch embedding -------------------------------------------------------------


def patch_embed(x: Tensor, patch_size: int, w_embed: Tensor, bias: Tensor,
                ) -> PatchGrid:
    """Flatten non-overlapping P^3 voxel patches and map them to C channels.

    ``x`` is (B, T, H, W, D) with H, W, D divisible by P; patch voxels are
    flattened row-major, so weight row 0 reads voxel (0,0,0) of each patch.
    """
    b, t, h, w, d = x.shape
    p = patch_size
    if h % p or w % p or d % p:
        raise ShapeError(f"extents {(h, w, d)} not divisible by patch size {p}")
    c = w_embed.shape[1]
    if w_embed.shape[0] != p**3:
        raise ShapeError(f"embed weight {w_embed.shape} != ({p**3}, C)")
    g = x.reshape(b, t, h // p, p, w // p, p, d // p, p)
    g = g.transpose((0, 1, 2, 4, 6, 3, 5, 7))
    g = g.reshape(b, t, h // p, w // p, d // p, p**3)
    out = tt.matmul(g, w_embed) + bias
    return PatchGrid(out, patch_size=p, stage=1)


def patch_merge(g: PatchGrid, w_merge: Tensor) -> PatchGrid:
    """Concatenate 2x2x2 neighboring tokens (8C') and map to 2C'; halves space."""
    b, t, h, w, d, c = g.tensor.shape
    if h % 2 or w % 2 or d % 2:
        raise ShapeError(f"patch_merge needs even extents, got {(h, w, d)}")
    if w_merge.shape != (8 * c, 2 * c):
        raise ShapeError(f"merge weight {w_merge.shape} != ({8 * c}, {2 * c})")
    x = g.tensor.reshape(b, t, h // 2, 2, w // 2, 2, d // 2, 2, c)
    x = x.transpose((0, 1, 2, 4, 6, 3, 5, 7, 8))
    x = x.reshape(b, t, h // 2, w // 2, d // 2, 8 * c)
    return PatchGrid(tt.matmul(x, w_merge), patch_size=g.patch_size, stage=g.stage + 1)


def pad_grid_even(g: PatchGrid) -> PatchGrid:
    """Zero-pad odd spatial extents up to even (pre-merge; no-op when even)."""
    b, t, h, w, d, c = g.tensor.shape
    if not (h % 2 or w % 2 or d % 2):
        return g
    widths = [(0, 0), (0, 0), (0, h % 2), (0, w % 2), (0, d % 2), (0, 0)]
    return PatchGrid(tt.pad(g.tensor, widths), patch_size=g.patch_size, stage=g.stage)


# -- windows ----------------------------------------------------------------------


def _segment_codes(length: int, m: int, shift: int) -> np.ndarray:
    """Per-position window-region code along one padded axis (before rolling)."""
    codes = np.zeros(length, dtype=np.int64)
    if shift > 0:
        codes[length - m:] = 1
        codes[length - shift:] = 2
    return codes


def window_groups(grid_shape, m: int, shift) -> np.ndarray:
    """(nW, M^3) region ids; -1 marks zero-padded slots.

    Attention may only connect tokens with equal nonnegative ids, which
    blocks both cross-pad and wrap-around (shifted) connections.
    """
    h, w, d = grid_shape
    hp, wp, dp = (int(np.ceil(e / m) * m) for e in grid_shape)
    axes_codes = [_segment_codes(length, m, s)
                  for length, s in zip((hp, wp, dp), shift)]
    ids = (axes_codes[0][:, None, None] * 9
           + axes_codes[1][None, :, None] * 3
           + axes_codes[2][None, None, :])
    valid = np.zeros((hp, wp, dp), dtype=bool)
    valid[:h, :w, :d] = True
    ids = np.where(valid, ids, -1)
    ids = np.roll(ids, tuple(-s for s in shift), axis=(0, 1, 2))
    nh, nw, nd = hp // m, wp // m, dp // m
    ids = ids.reshape(nh, m, nw, m, nd, m).transpose(0, 2, 4, 1, 3, 5)
    return ids.reshape(nh * nw * nd, m**3)


def window_partition(g: PatchGrid, m: int, shift=(0, 0, 0)) -> WindowSet:
    """Tile spatial axes into M^3 windows carrying all T frames.

    Pads up to multiples of M (recorded), optionally after a cyclic roll by
    ``-shift``; builds the per-window region ids whenever padding or shifting
    makes masking necessary.
    """
    if m < 1:
        raise ValueError(f"window size must be >= 1, got {m}")
    b, t, h, w, d, c = g.tensor.shape
    shift = tuple(int(s) for s in shift)
    x = g.tensor
    if any(shift):
        x = tt.roll(x, tuple(-s for s in shift), axes=(2, 3, 4))
    pads = tuple((-e) % m for e in (h, w, d))
    if any(pads):
        x = tt.pad(x, [(0, 0), (0, 0), (0, pads[0]), (0, pads[1]), (0, pads[2]), (0, 0)])
    hp, wp, dp = h + pads[0], w + pads[1], d + pads[2]
    nh, nw, nd = hp // m, wp // m, dp // m
    x = x.reshape(b, t, nh, m, nw, m, nd, m, c)
    x = x.transpose((0, 2, 4, 6, 1, 3, 5, 7, 8))
    windows = x.reshape(b, nh * nw * nd, t, m, m, m, c)
    groups = window_groups((h, w, d), m, shift) if (any(pads) or any(shift)) else None
    return WindowSet(windows=windows, m=m, grid_shape=(h, w, d), pad=pads,
                     shift=shift, groups=groups)


def window_reverse(ws: WindowSet, patch_size: int, stage: int = 0) -> PatchGrid:
    """Exact inverse of ``window_partition`` (unpad, unroll)."""
    b, n, t, m, _, _, c = ws.windows.shape
    h, w, d = ws.grid_shape
    hp, wp, dp = h + ws.pad[0], w + ws.pad[1], d + ws.pad[2]
    nh, nw, nd = hp // m, wp // m, dp // m
    x = ws.windows.reshape(b, nh, nw, nd, t, m, m, m, c)
    x = x.transpose((0, 4, 1, 5, 2, 6, 3, 7, 8))
    x = x.reshape(b, t, hp, wp, dp, c)
    if any(ws.pad):
        x = tt.crop(x, (slice(None), slice(None), slice(0, h), slice(0, w),
                        slice(0, d), slice(None)))
    if any(ws.shift):
        x = tt.roll(x, ws.shift, axes=(2, 3, 4))
    return PatchGrid(x, patch_size=patch_size, stage=stage)


# -- cyclic shift (standalone op; block internals go through window_partition) -----


def shift_amount(m: int) -> int:
    return m // 2


def cyclic_shift(g: PatchGrid, m: int) -> PatchGrid:
    """Circular roll of the spatial axes by -floor(M/2)."""
    s = shift_amount(m)
    if s == 0:
        return g
    rolled = tt.roll(g.tensor, (-s, -s, -s), axes=(2, 3, 4))
    return PatchGrid(rolled, patch_size=g.patch_size, stage=g.stage)


def cyclic_unshift(g: PatchGrid, m: int) -> PatchGrid:
    s = shift_amount(m)
    if s == 0:
        return g
    rolled = tt.roll(g.tensor, (s, s, s), axes=(2, 3, 4))
    return PatchGrid(rolled, patch_size=g.patch_size, stage=g.stage)


# -- pooling ------------------------------------------------------------------------


def global_pool(g: PatchGrid) -> Tensor:
    """Mean over all patches (T, H', W', D') down to (B, C')."""
    return g.tensor.mean(axis=(1, 2, 3, 4))
