"""Patch embedding, window partition, shifted windows, divided attention.

Run: python demos/04_windowed_attention.py
"""

import numpy as np

from voxswin import patching as pt
from voxswin import tensor as tt
from voxswin.attention import (
    AttentionParams,
    spatial_window_attention,
    temporal_attention,
)
from voxswin.patching import PatchGrid
from voxswin.tensor import Tensor

rng = np.random.default_rng(0)

print("== patch embedding: 96^3 x 15 frames, P=6 ==")
x = Tensor(rng.standard_normal((1, 15, 96, 96, 96)) * 0.1)
w = Tensor(rng.standard_normal((216, 36)) * 0.02)
grid = pt.patch_embed(x, 6, w, Tensor(np.zeros(36)))
t, h, wd, d, c = grid.tensor.shape[1:]
print(f"token grid: T={t} spatial {h}x{wd}x{d} channels {c}")
print(f"patch count: {t * h * wd * d} (THWD/P^3 = 15*96^3/6^3 = 61440)")

print("\n== window partition at M=6 ==")
ws = pt.window_partition(grid, 6)
print(f"padding {ws.pad}, spatial windows {ws.n_windows}, "
      f"window-time slots {ws.slots} (= 15 * ceil(16/6)^3)")

print("\n== shifted windows mask wrap-around connections ==")
small = PatchGrid(Tensor(rng.standard_normal((1, 1, 8, 8, 8, 4))), 1)
shifted = pt.window_partition(small, 4, shift=(2, 2, 2))
corner = shifted.groups[-1]
print(f"corner window carries {len(set(corner.tolist()))} distinct region ids "
      "(the 8 wrapped octants)")

print("\n== divided attention: windowed spatial, per-position temporal ==")
c, heads = 8, 2
params = AttentionParams(
    wq=Tensor(rng.standard_normal((c, c)) * 0.3),
    wk=Tensor(rng.standard_normal((c, c)) * 0.3),
    wv=Tensor(rng.standard_normal((c, c)) * 0.3),
    wo=Tensor(rng.standard_normal((c, c)) * 0.3),
    heads=heads)
data = rng.standard_normal((1, 4, 4, 4, 4, c))
g = PatchGrid(Tensor(data), 1)

with tt.no_grad():
    sp = spatial_window_attention(pt.window_partition(g, 2), params)
    tm = temporal_attention(g, params)
print("spatial windows out:", sp.windows.shape, " temporal out:", tm.tensor.shape)

bumped = data.copy()
bumped[0, 0, 3, 3, 3, :] += 100.0
with tt.no_grad():
    sp2 = spatial_window_attention(pt.window_partition(PatchGrid(Tensor(bumped), 1), 2),
                                   params)
untouched = np.array_equal(sp.windows.data[:, 0], sp2.windows.data[:, 0])
print("perturbing another window leaves window 0 bit-identical:", untouched)

print("\n== score-tensor sizes: the memory story in miniature ==")
for m in (2, 4):
    s = m**3
    print(f"  spatial window {m}^3: {s} tokens -> {s * s} score elements "
          f"per (window, frame, head)  [M^6 = {m**6}]")
for dsz in (2, 4):
    s = dsz**4
    print(f"  joint window {dsz}^4: {s} tokens -> {s * s} score elements "
          f"per (window, head)        [d^8 = {dsz**8}]")
