"""Windowed spatial attention, per-position temporal attention, block pairs.

One block runs the four-step residual sequence

    x = x + SpatialMSA(LN(x))      # windowed over M^3 spatial tokens, per frame
    x = x + MLP(LN(x))
    x = x + TemporalMSA(LN(x))     # over T frames, per spatial position
    x = x + MLP(LN(x))

and a block pair executes it twice, the second time with the window grid
cyclically shifted by floor(M/2) (wrap-around connections masked). The
temporal attention runs on the un-windowed grid. A joint 4-D windowed
variant (d x d x d x d tokens over space-time) exists as the cost baseline.

No relative position bias inside windows (optional flag, default off, keeps
attention permutation-equivariant within a window). Logit scale is
1/sqrt(D_h); masked logits get -1e9 before the softmax, which underflows to
exactly zero weight after max subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from voxswin import probe
from voxswin import tensor as tt
from voxswin.patching import PatchGrid, WindowSet, window_partition, window_reverse
from voxswin.tensor import ShapeError, Tensor

MASK_VALUE = -1e9


class ConfigError(ValueError):
    """Head count / width combination the attention math cannot satisfy."""


@dataclass
class AttentionParams:
    wq: Tensor  # (C, C)
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    def head_dim(self, c: int) -> int:
        if c % self.heads:
            raise ConfigError(f"width {c} not divisible by {self.heads} heads")
        return c // self.heads


@dataclass
class BlockParams:
    """One block: spatial MSA, MLP, temporal MSA, MLP, each pre-normalized."""

    norm_sp: tuple[Tensor, Tensor]
    spatial: AttentionParams
    norm_mlp_sp: tuple[Tensor, Tensor]
    mlp_sp: tuple[Tensor, Tensor, Tensor, Tensor]
    norm_t: tuple[Tensor, Tensor]
    temporal: AttentionParams
    norm_mlp_t: tuple[Tensor, Tensor]
    mlp_t: tuple[Tensor, Tensor, Tensor, Tensor]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., S, C) -> (..., heads, S, C/heads)"""
    *lead, s, c = x.shape
    x = x.reshape(*lead, s, heads, c // heads)
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return x.transpose(perm)


def _join_heads(x: Tensor) -> Tensor:
    """(..., heads, S, D_h) -> (..., S, heads * D_h)"""
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = x.transpose(perm)
    *lead, s, h, dh = x.shape
    return x.reshape(*lead, s, h * dh)


def _swap_last(x: Tensor) -> Tensor:
    nd = x.ndim
    return x.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2))


def multi_head_attention(x: Tensor, p: AttentionParams,
                         mask: np.ndarray | None = None,
                         kind: str = "attention") -> Tensor:
    """Scaled dot-product MSA over the second-to-last (token) axis."""
    c = x.shape[-1]
    dh = p.head_dim(c)
    for name, w in (("wq", p.wq), ("wk", p.wk), ("wv", p.wv), ("wo", p.wo)):
        if w.shape != (c, c):
            raise ShapeError(f"{name} shape {w.shape} != ({c}, {c})")
    q = _split_heads(tt.matmul(x, p.wq), p.heads)
    k = _split_heads(tt.matmul(x, p.wk), p.heads)
    v = _split_heads(tt.matmul(x, p.wv), p.heads)
    scores = tt.matmul(q, _swap_last(k)) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    attn = tt.softmax(scores, axis=-1)
    attended = tt.matmul(attn, v)
    out = tt.matmul(_join_heads(attended), p.wo)
    probe.record_attention(kind, {
        "q": q.size, "k": k.size, "v": v.size,
        "scores": scores.size, "attended": attended.size, "out": out.size,
    })
    return out


def groups_to_mask(groups: np.ndarray) -> np.ndarray:
    """(nW, S) region ids -> additive (1, nW, 1, 1, S, S) mask.

    A query may attend a key only when both carry the same nonnegative id;
    padded keys (id -1) are never attended. Rows of padded queries have every
    key masked and degrade to uniform weights; their outputs are dropped by
    window_reverse, so that is harmless.
    """
    gq = groups[:, :, None]
    gk = groups[:, None, :]
    allowed = (gq == gk) & (gk >= 0)
    mask = np.where(allowed, 0.0, MASK_VALUE)
    n, s, _ = mask.shape
    return mask.reshape(1, n, 1, 1, s, s)


def spatial_window_attention(ws: WindowSet, p: AttentionParams) -> WindowSet:
    """MSA within each (window, frame): tokens are the M^3 window positions."""
    b, n, t, m, _, _, c = ws.windows.shape
    x = ws.windows.reshape(b, n, t, m**3, c)
    mask = groups_to_mask(ws.groups) if ws.groups is not None else None
    out = multi_head_attention(x, p, mask, kind="spatial")
    out = out.reshape(b, n, t, m, m, m, c)
    return WindowSet(windows=out, m=ws.m, grid_shape=ws.grid_shape, pad=ws.pad,
                     shift=ws.shift, groups=ws.groups)


def temporal_attention(g: PatchGrid, p: AttentionParams) -> PatchGrid:
    """MSA over the T frames of each spatial position, positions independent."""
    x = g.tensor  # (B, T, H, W, D, C)
    x = x.transpose((0, 2, 3, 4, 1, 5))
    out = multi_head_attention(x, p, None, kind="temporal")
    out = out.transpose((0, 4, 1, 2, 3, 5))
    return PatchGrid(out, patch_size=g.patch_size, stage=g.stage)


# -- block assembly ---------------------------------------------------------------


def effective_window(m: int, grid_shape) -> int:
    """Clamp the window to the smallest spatial extent of the stage."""
    return max(1, min(m, min(grid_shape)))


def block_shift(m_eff: int, grid_shape, shifted: bool) -> tuple[int, int, int]:
    """floor(M/2) per axis, but no shift along axes a single window covers."""
    if not shifted:
        return (0, 0, 0)
    half = m_eff // 2
    return tuple(half if extent > m_eff else 0 for extent in grid_shape)


def divided_block(g: PatchGrid, bp: BlockParams, m: int, shifted: bool) -> PatchGrid:
    m_eff = effective_window(m, g.spatial_shape)
    shift = block_shift(m_eff, g.spatial_shape, shifted)

    x = g.tensor
    h = tt.layer_norm(x, *bp.norm_sp)
    ws = window_partition(PatchGrid(h, g.patch_size, g.stage), m_eff, shift)
    att = window_reverse(spatial_window_attention(ws, bp.spatial), g.patch_size, g.stage)
    x = x + att.tensor

    x = x + tt.mlp_block(tt.layer_norm(x, *bp.norm_mlp_sp), *bp.mlp_sp)

    h = tt.layer_norm(x, *bp.norm_t)
    x = x + temporal_attention(PatchGrid(h, g.patch_size, g.stage), bp.temporal).tensor

    x = x + tt.mlp_block(tt.layer_norm(x, *bp.norm_mlp_t), *bp.mlp_t)
    return PatchGrid(x, patch_size=g.patch_size, stage=g.stage)


def divided_block_pair(g: PatchGrid, pair: tuple[BlockParams, BlockParams],
                    m: int) -> PatchGrid:
    """Two consecutive blocks: plain windows, then shifted windows."""
    g = divided_block(g, pair[0], m, shifted=False)
    return divided_block(g, pair[1], m, shifted=True)


# -- joint 4-D baseline -------------------------------------------------------------


def joint_4d_window_attention(g: PatchGrid, p: AttentionParams, d: int) -> PatchGrid:
    """Attention over d x d x d x d space-time windows (cost-comparison baseline)."""
    b, t, h, w, dd, c = g.tensor.shape
    if t < d:
        raise ShapeError(f"joint window needs T >= d, got T={t}, d={d}")
    pads = tuple((-e) % d for e in (t, h, w, dd))
    x = g.tensor
    if any(pads):
        x = tt.pad(x, [(0, 0), (0, pads[0]), (0, pads[1]), (0, pads[2]),
                       (0, pads[3]), (0, 0)])
    tp, hp, wp, dp = t + pads[0], h + pads[1], w + pads[2], dd + pads[3]
    nt, nh, nw, nd = tp // d, hp // d, wp // d, dp // d
    x = x.reshape(b, nt, d, nh, d, nw, d, nd, d, c)
    x = x.transpose((0, 1, 3, 5, 7, 2, 4, 6, 8, 9))
    x = x.reshape(b, nt * nh * nw * nd, d**4, c)

    mask = None
    if any(pads):
        valid = np.zeros((tp, hp, wp, dp), dtype=bool)
        valid[:t, :h, :w, :dd] = True
        ids = np.where(valid, 0, -1)
        ids = ids.reshape(nt, d, nh, d, nw, d, nd, d).transpose(0, 2, 4, 6, 1, 3, 5, 7)
        groups = ids.reshape(nt * nh * nw * nd, d**4)
        gq, gk = groups[:, :, None], groups[:, None, :]
        allowed = (gq == gk) & (gk >= 0)
        mask = np.where(allowed, 0.0, MASK_VALUE).reshape(1, x.shape[1], 1, d**4, d**4)

    out = multi_head_attention(x, p, mask, kind="joint4d")
    out = out.reshape(b, nt, nh, nw, nd, d, d, d, d, c)
    out = out.transpose((0, 1, 5, 2, 6, 3, 7, 4, 8, 9))
    out = out.reshape(b, tp, hp, wp, dp, c)
    if any(pads):
        out = tt.crop(out, (slice(None), slice(0, t), slice(0, h), slice(0, w),
                            slice(0, dd), slice(None)))
    return PatchGrid(out, patch_size=g.patch_size, stage=g.stage)
