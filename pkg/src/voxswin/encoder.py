"""Full encoder assembly: four stages of windowed space-time block pairs.

Pipeline: patch embed -> (+ learned absolute position embeddings) ->
stage 1 -> merge -> stage 2 -> merge -> stage 3 -> merge -> stage 4 ->
global mean pool. Channel widths per stage are (C, 2C, 4C, 8C); the default
configuration (96^3 input, P=6, C=36) ends at width 288, projected to 128
for the contrastive loss. Fine-tuning swaps the projector for a dense
classification head over the same pooled feature.

Positional embeddings are factorized into a spatial table over the stage-1
grid plus a temporal table over the frame axis, both added after the patch
embedding (ablatable via ``pos_embed``).
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from voxswin import attention as at
from voxswin import patching as pt
from voxswin import tensor as tt
from voxswin.attention import AttentionParams, BlockParams
from voxswin.tensor import Parameter, Tensor
from voxswin.volumes import Volume4D


@dataclass(frozen=True)
class ModelConfig:
    extent: int = 96
    patch_size: int = 6
    embed_dim: int = 36
    window: int = 6
    depths: tuple[int, ...] = (1, 1, 3, 1)  # block *pairs* per stage
    heads: tuple[int, ...] = (3, 6, 12, 24)
    frames: int = 15
    pos_embed: bool = True
    mlp_ratio: int = 4
    projector_dim: int = 128
    n_classes: int | None = None

    def __post_init__(self):
        if self.extent % self.patch_size:
            raise ValueError(f"extent {self.extent} not divisible by patch {self.patch_size}")
        if len(self.depths) != len(self.heads):
            raise ValueError("depths and heads must have one entry per stage")
        for s, h in enumerate(self.heads):
            if self.stage_width(s) % h:
                raise ValueError(
                    f"stage {s + 1} width {self.stage_width(s)} not divisible by {h} heads")
        if min(self.window, self.frames, self.embed_dim, self.mlp_ratio,
               self.projector_dim) < 1:
            raise ValueError("window, frames, widths must be positive")

    @property
    def n_stages(self) -> int:
        return len(self.depths)

    def stage_width(self, stage: int) -> int:
        return self.embed_dim * 2**stage

    @property
    def encoder_dim(self) -> int:
        return self.stage_width(self.n_stages - 1)

    def stage_grid(self, stage: int) -> int:
        """Spatial extent of the token grid at a stage (odd extents pad up)."""
        g = self.extent // self.patch_size
        for _ in range(stage):
            g = (g + 1) // 2
        return g

    @property
    def patch_grid(self) -> int:
        return self.extent // self.patch_size

    @classmethod
    def toy(cls, frames: int = 3, window: int = 4, n_classes: int | None = None,
            **overrides) -> "ModelConfig":
        """Desk-scale configuration: 24^3 input, width 8, one pair per stage."""
        kwargs = dict(extent=24, patch_size=6, embed_dim=8, window=window,
                      depths=(1, 1, 1, 1), heads=(2, 4, 8, 8), frames=frames,
                      n_classes=n_classes)
        kwargs.update(overrides)
        return cls(**kwargs)

    def with_classes(self, n_classes: int) -> "ModelConfig":
        return replace(self, n_classes=n_classes)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until all values lie within 2 std."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2 * std
    return out


ENCODER_PREFIXES = ("embed.", "pos.", "stage", "merge")


class Model:
    """Encoder f, projector g, optional classification head, one registry."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: OrderedDict[str, Parameter] = OrderedDict()
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._build(rng)

    # -- construction ------------------------------------------------------

    def _register(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = Parameter(name, data)
        self.params[name] = p
        return p

    def _dense(self, rng, name, shape):
        return self._register(name, trunc_normal(rng, shape))

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        p3 = cfg.patch_size**3
        self.embed_w = self._dense(rng, "embed.W", (p3, cfg.embed_dim))
        self.embed_b = self._register("embed.b", np.zeros(cfg.embed_dim))
        g = cfg.patch_grid
        if cfg.pos_embed:
            self.pos_spatial = self._register(
                "pos.spatial", trunc_normal(rng, (1, 1, g, g, g, cfg.embed_dim)))
            self.pos_temporal = self._register(
                "pos.temporal", trunc_normal(rng, (1, cfg.frames, 1, 1, 1, cfg.embed_dim)))

        self.stages: list[list[BlockParams]] = []
        self.merges: list[Parameter] = []
        for s in range(cfg.n_stages):
            c = cfg.stage_width(s)
            blocks = []
            for k in range(2 * cfg.depths[s]):
                blocks.append(self._build_block(rng, f"stage{s + 1}.block{k + 1}",
                                                c, cfg.heads[s]))
            self.stages.append(blocks)
            if s + 1 < cfg.n_stages:
                self.merges.append(
                    self._dense(rng, f"merge{s + 1}.W", (8 * c, 2 * c)))

        d_e = cfg.encoder_dim
        self.proj_w = self._dense(rng, "projector.W", (d_e, cfg.projector_dim))
        self.proj_b = self._register("projector.b", np.zeros(cfg.projector_dim))
        if cfg.n_classes is not None:
            self.head_w = self._dense(rng, "head.W", (d_e, cfg.n_classes))
            self.head_b = self._register("head.b", np.zeros(cfg.n_classes))

    def _build_block(self, rng, prefix: str, c: int, heads: int) -> BlockParams:
        def ln(tag):
            return (self._register(f"{prefix}.{tag}.gamma", np.ones(c)),
                    self._register(f"{prefix}.{tag}.beta", np.zeros(c)))

        def attn(tag):
            return AttentionParams(
                wq=self._dense(rng, f"{prefix}.{tag}.Wq", (c, c)),
                wk=self._dense(rng, f"{prefix}.{tag}.Wk", (c, c)),
                wv=self._dense(rng, f"{prefix}.{tag}.Wv", (c, c)),
                wo=self._dense(rng, f"{prefix}.{tag}.Wo", (c, c)),
                heads=heads)

        def mlp(tag):
            hidden = self.cfg.mlp_ratio * c
            return (self._dense(rng, f"{prefix}.{tag}.W1", (c, hidden)),
                    self._register(f"{prefix}.{tag}.b1", np.zeros(hidden)),
                    self._dense(rng, f"{prefix}.{tag}.W2", (hidden, c)),
                    self._register(f"{prefix}.{tag}.b2", np.zeros(c)))

        return BlockParams(norm_sp=ln("norm_sp"), spatial=attn("spatial"),
                           norm_mlp_sp=ln("norm_mlp_sp"), mlp_sp=mlp("mlp_sp"),
                           norm_t=ln("norm_t"), temporal=attn("temporal"),
                           norm_mlp_t=ln("norm_mlp_t"), mlp_t=mlp("mlp_t"))

    # -- parameter plumbing ---------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def encoder_param_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(ENCODER_PREFIXES)]

    # -- forward ----------------------------------------------------------------

    def _as_batch(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        if isinstance(x, Volume4D):
            x = [x]
        if isinstance(x, (list, tuple)):
            x = np.stack([v.voxels() for v in x], axis=0)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 4:
            x = x[np.newaxis]
        return Tensor(x)

    def encode(self, x) -> Tensor:
        """(B, T, E, E, E) voxels -> (B, encoder_dim) pooled features."""
        x = self._as_batch(x)
        cfg = self.cfg
        if x.shape[1:] != (cfg.frames, cfg.extent, cfg.extent, cfg.extent):
            raise ValueError(
                f"input shape {x.shape[1:]} != config "
                f"({cfg.frames}, {cfg.extent}, {cfg.extent}, {cfg.extent})")
        g = pt.patch_embed(x, cfg.patch_size, self.embed_w, self.embed_b)
        if cfg.pos_embed:
            g = pt.PatchGrid(g.tensor + self.pos_spatial + self.pos_temporal,
                             g.patch_size, g.stage)
        for s, blocks in enumerate(self.stages):
            for i in range(0, len(blocks), 2):
                g = at.divided_block_pair(g, (blocks[i], blocks[i + 1]), cfg.window)
            if s + 1 < cfg.n_stages:
                g = pt.pad_grid_even(g)
                g = pt.patch_merge(g, self.merges[s])
        return pt.global_pool(g)

    def project(self, h: Tensor) -> Tensor:
        """Dense layer then row L2 normalization (cosine-ready)."""
        if h.shape[-1] != self.cfg.encoder_dim:
            raise tt.ShapeError(f"projector expects width {self.cfg.encoder_dim}, "
                                f"got {h.shape[-1]}")
        z = tt.matmul(h, self.proj_w) + self.proj_b
        norms = np.linalg.norm(z.data, axis=-1)
        if np.any(norms < 1e-12):
            warnings.warn("degenerate projector norm; returning zero rows as-is")
        return tt.l2_normalize(z)

    def classify(self, h: Tensor) -> Tensor:
        if self.cfg.n_classes is None:
            raise ValueError("model built without a classification head")
        if h.shape[-1] != self.cfg.encoder_dim:
            raise tt.ShapeError(f"head expects width {self.cfg.encoder_dim}, "
                                f"got {h.shape[-1]}")
        return tt.matmul(h, self.head_w) + self.head_b


def volumes_to_batch(samples: list[Volume4D]) -> np.ndarray:
    return np.stack([v.voxels() for v in samples], axis=0)
