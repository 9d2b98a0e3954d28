"""Analytic attention memory/FLOP model plus an instrumented forward probe.

Counting conventions (attention intermediates only, per attention layer):

- q, k, v, attended, out: one element per token per channel (padded window
  tokens included, since that is what actually gets allocated)
- scores: windows x heads x S^2 elements, S the tokens per window; for the
  divided mode S = M_eff^3 per (window, frame), for the joint 4-D mode
  S = d^4 per space-time window. Per-window score elements therefore follow
  the M^6 / d^8 growth laws.
- FLOPs: 2 per multiply-accumulate; q/k/v/out projections plus the two
  S x S matmuls.

Weights and LN/MLP activations do not vary with the window size, so they are
reported as separate constant lines rather than folded into the comparison.
The divided mode clamps the window to the stage extent exactly like the
encoder; the joint baseline pads every axis up to multiples of d.

Bytes are elements x precision; 2-byte precision models half-precision
forward passes, 8-byte matches the float64 reference path. Absolute device
MiB figures are out of scope: allocator and framework overhead make them
meaningless here. The model reproduces orderings and growth exponents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from voxswin import attention as at
from voxswin import probe as pb
from voxswin import tensor as tt
from voxswin.attention import AttentionParams
from voxswin.encoder import ModelConfig
from voxswin.patching import PatchGrid, window_partition
from voxswin.tensor import Tensor

MODES = ("divided", "joint4d")


@dataclass
class LayerCost:
    kind: str  # spatial | temporal | joint4d
    windows: int
    slots: int                      # window-time products actually attended
    tokens_per_window: int
    score_elements_per_window: int  # per head per slot: S^2
    score_elements: int
    qkv_elements: int
    attended_elements: int
    out_elements: int

    @property
    def activation_elements(self) -> int:
        return self.qkv_elements + self.score_elements + self.attended_elements \
            + self.out_elements

    def element_dict(self) -> dict[str, int]:
        third = self.qkv_elements // 3
        return {"q": third, "k": third, "v": third, "scores": self.score_elements,
                "attended": self.attended_elements, "out": self.out_elements}


@dataclass
class StageCost:
    stage: int
    grid: int
    frames: int
    channels: int
    heads: int
    layers: int  # attention layers of each kind in this stage
    window: int  # effective window actually used
    per_layer: list[LayerCost]
    flops: int

    @property
    def score_elements(self) -> int:
        return self.layers * sum(lc.score_elements for lc in self.per_layer)

    @property
    def activation_elements(self) -> int:
        return self.layers * sum(lc.activation_elements for lc in self.per_layer)


@dataclass
class CostReport:
    mode: str
    window: int
    precision_bytes: int
    stages: list[StageCost] = field(default_factory=list)
    weight_elements: int = 0
    ln_mlp_elements: int = 0

    @property
    def total_score_elements(self) -> int:
        return sum(s.score_elements for s in self.stages)

    @property
    def total_activation_elements(self) -> int:
        return sum(s.activation_elements for s in self.stages)

    @property
    def total_activation_bytes(self) -> int:
        return self.total_activation_elements * self.precision_bytes

    @property
    def total_flops(self) -> int:
        return sum(s.flops for s in self.stages)

    @property
    def weight_bytes(self) -> int:
        return self.weight_elements * self.precision_bytes

    @property
    def ln_mlp_bytes(self) -> int:
        return self.ln_mlp_elements * self.precision_bytes


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def spatial_layer_cost(grid: int, frames: int, channels: int, heads: int,
                       window: int) -> LayerCost:
    m = max(1, min(window, grid))
    w = _ceil_div(grid, m) ** 3
    s = m**3
    n_tokens = w * frames * s
    return LayerCost(kind="spatial", windows=w, slots=w * frames,
                     tokens_per_window=s, score_elements_per_window=s * s,
                     score_elements=w * frames * heads * s * s,
                     qkv_elements=3 * n_tokens * channels,
                     attended_elements=n_tokens * channels,
                     out_elements=n_tokens * channels)


def temporal_layer_cost(grid: int, frames: int, channels: int,
                        heads: int) -> LayerCost:
    positions = grid**3
    n_tokens = positions * frames
    return LayerCost(kind="temporal", windows=positions, slots=positions,
                     tokens_per_window=frames,
                     score_elements_per_window=frames * frames,
                     score_elements=positions * heads * frames * frames,
                     qkv_elements=3 * n_tokens * channels,
                     attended_elements=n_tokens * channels,
                     out_elements=n_tokens * channels)


def joint_layer_cost(grid: int, frames: int, channels: int, heads: int,
                     window: int) -> LayerCost:
    d = window
    w = _ceil_div(frames, d) * _ceil_div(grid, d) ** 3
    s = d**4
    n_tokens = w * s
    return LayerCost(kind="joint4d", windows=w, slots=w,
                     tokens_per_window=s, score_elements_per_window=s * s,
                     score_elements=w * heads * s * s,
                     qkv_elements=3 * n_tokens * channels,
                     attended_elements=n_tokens * channels,
                     out_elements=n_tokens * channels)


def _layer_flops(lc: LayerCost, channels: int, heads: int) -> int:
    n_tokens = lc.qkv_elements // (3 * channels)
    proj = 8 * n_tokens * channels * channels  # q, k, v, out projections
    # QK^T and AV each cost D_h MACs per scored pair (2 flops per MAC)
    matmuls = 4 * lc.score_elements * (channels // heads)
    return proj + matmuls


def weight_elements(cfg: ModelConfig) -> int:
    """Parameter count of the full model (encoder + projector + head)."""
    p3 = cfg.patch_size**3
    total = p3 * cfg.embed_dim + cfg.embed_dim
    if cfg.pos_embed:
        g = cfg.patch_grid
        total += g**3 * cfg.embed_dim + cfg.frames * cfg.embed_dim
    for s in range(cfg.n_stages):
        c = cfg.stage_width(s)
        hidden = cfg.mlp_ratio * c
        per_block = (2 * (4 * c * c)          # two attention layers
                     + 2 * (c * hidden + hidden + hidden * c + c)  # two MLPs
                     + 4 * 2 * c)             # four layer norms
        total += 2 * cfg.depths[s] * per_block
        if s + 1 < cfg.n_stages:
            total += 8 * c * 2 * c
    d_e = cfg.encoder_dim
    total += d_e * cfg.projector_dim + cfg.projector_dim
    if cfg.n_classes is not None:
        total += d_e * cfg.n_classes + cfg.n_classes
    return total


def ln_mlp_elements(cfg: ModelConfig) -> int:
    """Activation elements of LN and MLP layers (window-size independent)."""
    total = 0
    for s in range(cfg.n_stages):
        c = cfg.stage_width(s)
        n_tokens = cfg.frames * cfg.stage_grid(s) ** 3
        per_block = 4 * n_tokens * c \
            + 2 * (n_tokens * cfg.mlp_ratio * c + n_tokens * c)
        total += 2 * cfg.depths[s] * per_block
    return total


def attention_cost(cfg: ModelConfig, mode: str, precision_bytes: int = 2,
                   window: int | None = None) -> CostReport:
    """Closed-form per-stage attention cost for a config and attention mode."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if precision_bytes not in (2, 8):
        raise ValueError("precision_bytes must be 2 (half) or 8 (float64)")
    window = cfg.window if window is None else window
    report = CostReport(mode=mode, window=window, precision_bytes=precision_bytes,
                        weight_elements=weight_elements(cfg),
                        ln_mlp_elements=ln_mlp_elements(cfg))
    for s in range(cfg.n_stages):
        grid = cfg.stage_grid(s)
        c = cfg.stage_width(s)
        heads = cfg.heads[s]
        layers = 2 * cfg.depths[s]
        if mode == "divided":
            per_layer = [
                spatial_layer_cost(grid, cfg.frames, c, heads, window),
                temporal_layer_cost(grid, cfg.frames, c, heads),
            ]
            m_eff = max(1, min(window, grid))
        else:
            per_layer = [joint_layer_cost(grid, cfg.frames, c, heads, window)]
            m_eff = window
        flops = layers * sum(_layer_flops(lc, c, heads) for lc in per_layer)
        report.stages.append(StageCost(
            stage=s + 1, grid=grid, frames=cfg.frames, channels=c, heads=heads,
            layers=layers, window=m_eff, per_layer=per_layer, flops=flops))
    return report


# -- empirical probe -------------------------------------------------------------------


@dataclass
class ProbeResult:
    mode: str
    calls: list[pb.AttentionCallRecord]
    precision_bytes: int

    @property
    def total_bytes(self) -> int:
        return sum(c.total_elements() for c in self.calls) * self.precision_bytes

    @property
    def peak_call_bytes(self) -> int:
        return max((c.total_elements() for c in self.calls), default=0) \
            * self.precision_bytes

    def score_elements(self) -> list[int]:
        return [c.elements["scores"] for c in self.calls]


def empirical_probe(cfg: ModelConfig, mode: str, precision_bytes: int = 2,
                    window: int | None = None) -> ProbeResult:
    """One instrumented forward pass per stage at batch 1 on zero inputs.

    Runs the real attention ops on grids shaped exactly like each stage and
    records every intermediate they allocate. Out-of-memory propagates as
    MemoryError (the CLI prints the analytic estimate instead).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    window = cfg.window if window is None else window
    counter = pb.AllocationProbe()
    rng = np.random.default_rng(0)
    with tt.no_grad(), pb.activate(counter):
        for s in range(cfg.n_stages):
            grid = cfg.stage_grid(s)
            c = cfg.stage_width(s)
            heads = cfg.heads[s]
            params = AttentionParams(
                wq=Tensor(rng.standard_normal((c, c)) * 0.02),
                wk=Tensor(rng.standard_normal((c, c)) * 0.02),
                wv=Tensor(rng.standard_normal((c, c)) * 0.02),
                wo=Tensor(rng.standard_normal((c, c)) * 0.02),
                heads=heads)
            g = PatchGrid(Tensor(np.zeros((1, cfg.frames, grid, grid, grid, c))),
                          patch_size=cfg.patch_size, stage=s + 1)
            for _ in range(2 * cfg.depths[s]):
                if mode == "divided":
                    m_eff = at.effective_window(window, g.spatial_shape)
                    ws = window_partition(g, m_eff)
                    at.spatial_window_attention(ws, params)
                    at.temporal_attention(g, params)
                else:
                    at.joint_4d_window_attention(g, params, window)
    return ProbeResult(mode=mode, calls=counter.calls, precision_bytes=precision_bytes)


def format_report_table(reports: list[CostReport]) -> str:
    """Human-readable side-by-side stage table."""
    lines = []
    for rep in reports:
        lines.append(f"mode={rep.mode}  window={rep.window}  "
                     f"precision={rep.precision_bytes}B")
        header = (f"  {'stage':>5} {'grid':>5} {'chan':>5} {'heads':>5} "
                  f"{'layers':>6} {'win':>4} {'tok/win':>8} {'scores/win':>12} "
                  f"{'scores':>16} {'act bytes':>14} {'GFLOPs':>10}")
        lines.append(header)
        for s in rep.stages:
            tok = max(lc.tokens_per_window for lc in s.per_layer)
            spw = max(lc.score_elements_per_window for lc in s.per_layer)
            lines.append(
                f"  {s.stage:>5} {s.grid:>5} {s.channels:>5} {s.heads:>5} "
                f"{s.layers:>6} {s.window:>4} {tok:>8} {spw:>12} "
                f"{s.score_elements:>16} "
                f"{s.activation_elements * rep.precision_bytes:>14} "
                f"{s.flops / 1e9:>10.3f}")
        lines.append(f"  totals: score elements {rep.total_score_elements}  "
                     f"activation bytes {rep.total_activation_bytes}  "
                     f"GFLOPs {rep.total_flops / 1e9:.3f}")
        lines.append(f"  constant lines: weights {rep.weight_bytes} bytes  "
                     f"LN/MLP activations {rep.ln_mlp_bytes} bytes")
        lines.append("")
    if len(reports) == 2:
        a, b = reports
        hi = a if a.total_activation_bytes >= b.total_activation_bytes else b
        lo = b if hi is a else a
        ratio = hi.total_activation_bytes / max(lo.total_activation_bytes, 1)
        lines.append(f"ordering: {hi.mode} > {lo.mode} "
                     f"({hi.total_activation_bytes} vs {lo.total_activation_bytes} "
                     f"bytes, {ratio:.1f}x)")
    return "\n".join(lines)


def report_to_tsv(rep: CostReport) -> str:
    rows = ["mode\tstage\tgrid\tchannels\theads\tlayers\twindow\ttokens_per_window"
            "\tscore_elements_per_window\tscore_elements\tactivation_bytes\tflops"]
    for s in rep.stages:
        tok = max(lc.tokens_per_window for lc in s.per_layer)
        spw = max(lc.score_elements_per_window for lc in s.per_layer)
        rows.append("\t".join(map(str, [
            rep.mode, s.stage, s.grid, s.channels, s.heads, s.layers, s.window,
            tok, spw, s.score_elements,
            s.activation_elements * rep.precision_bytes, s.flops])))
    rows.append("\t".join(map(str, [
        rep.mode, "total", "", "", "", "", rep.window, "", "",
        rep.total_score_elements, rep.total_activation_bytes, rep.total_flops])))
    return "\n".join(rows) + "\n"
