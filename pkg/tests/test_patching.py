import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxswin import patching as pt
from voxswin.tensor import Parameter, ShapeError, Tensor


def grid(b=1, t=2, e=8, c=4, seed=0):
    data = np.random.default_rng(seed).standard_normal((b, t, e, e, e, c))
    return pt.PatchGrid(Tensor(data), patch_size=6)


# -- patch embed -----------------------------------------------------------------


def test_patch_embed_counts_full_size():
    x = Tensor(np.zeros((1, 15, 96, 96, 96)))
    w = Tensor(np.zeros((216, 4)))
    g = pt.patch_embed(x, 6, w, Tensor(np.zeros(4)))
    assert g.tensor.shape == (1, 15, 16, 16, 16, 4)
    # THWD / P^3 = 15 * 4096
    assert 15 * 16 * 16 * 16 == 61440


def test_patch_embed_zero_weight_gives_bias():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((1, 1, 12, 12, 12)))
    bias = rng.standard_normal(5)
    g = pt.patch_embed(x, 6, Tensor(np.zeros((216, 5))), Tensor(bias))
    assert np.allclose(g.tensor.data, bias)


def test_patch_embed_onehot_selector():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 12, 12, 12))
    w = np.zeros((216, 3))
    w[0, 1] = 1.0  # channel 1 reads voxel (0,0,0) of each patch
    g = pt.patch_embed(Tensor(x), 6, Tensor(w), Tensor(np.zeros(3)))
    assert np.array_equal(g.tensor.data[..., 1], x[:, :, ::6, ::6, ::6])
    assert np.all(g.tensor.data[..., 0] == 0)


def test_patch_embed_rejects_indivisible():
    with pytest.raises(ShapeError):
        pt.patch_embed(Tensor(np.zeros((1, 1, 10, 12, 12))), 6,
                       Tensor(np.zeros((216, 3))), Tensor(np.zeros(3)))


# -- patch merge -----------------------------------------------------------------


def test_patch_merge_halves_and_doubles():
    g = pt.PatchGrid(Tensor(np.zeros((1, 2, 16, 16, 16, 36))), patch_size=6)
    merged = pt.patch_merge(g, Tensor(np.zeros((288, 72))))
    assert merged.tensor.shape == (1, 2, 8, 8, 8, 72)


def test_three_merges_reach_width_288():
    c = 36
    g = pt.PatchGrid(Tensor(np.zeros((1, 1, 16, 16, 16, c))), patch_size=6)
    for _ in range(3):
        g = pt.patch_merge(g, Tensor(np.zeros((8 * g.channels, 2 * g.channels))))
    assert g.channels == 288
    assert g.spatial_shape == (2, 2, 2)


def test_patch_merge_constant_average():
    c = 4
    g = pt.PatchGrid(Tensor(np.full((1, 1, 4, 4, 4, c), 2.5)), patch_size=2)
    # concat layout is neighbor-major: flat index = neighbor * c + channel
    w = np.zeros((8 * c, 2 * c))
    for out_ch in range(2 * c):
        w[out_ch % c::c, out_ch] = 1.0 / 8.0  # average one channel over the 8 neighbors
    merged = pt.patch_merge(g, Tensor(w))
    assert np.allclose(merged.tensor.data, 2.5)


def test_patch_merge_odd_extent_errors():
    g = pt.PatchGrid(Tensor(np.zeros((1, 1, 3, 4, 4, 4))), patch_size=2)
    with pytest.raises(ShapeError):
        pt.patch_merge(g, Tensor(np.zeros((32, 8))))


def test_pad_grid_even_pads_then_merge_works():
    g = pt.PatchGrid(Tensor(np.ones((1, 1, 1, 1, 1, 4))), patch_size=6)
    padded = pt.pad_grid_even(g)
    assert padded.tensor.shape == (1, 1, 2, 2, 2, 4)
    merged = pt.patch_merge(padded, Tensor(np.ones((32, 8))))
    assert merged.tensor.shape == (1, 1, 1, 1, 1, 8)


# -- windows -----------------------------------------------------------------------


def test_window_counts_16_cubed_m6():
    g = pt.PatchGrid(Tensor(np.zeros((1, 15, 16, 16, 16, 4))), patch_size=6)
    ws = pt.window_partition(g, 6)
    assert ws.pad == (2, 2, 2)
    assert ws.n_windows == 27
    assert ws.slots == 405


def test_window_divisible_case_no_padding():
    g = pt.PatchGrid(Tensor(np.zeros((1, 2, 8, 8, 8, 4))), patch_size=6)
    ws = pt.window_partition(g, 4)
    assert ws.pad == (0, 0, 0)
    assert ws.n_windows == 8
    assert ws.groups is None


def test_partition_reverse_roundtrip_with_padding():
    g = grid(b=2, t=3, e=7, c=5, seed=3)
    ws = pt.window_partition(g, 4)
    back = pt.window_reverse(ws, g.patch_size)
    assert np.array_equal(back.tensor.data, g.tensor.data)


def test_partition_reverse_roundtrip_with_shift():
    g = grid(b=1, t=2, e=8, c=3, seed=4)
    ws = pt.window_partition(g, 4, shift=(2, 2, 2))
    back = pt.window_reverse(ws, g.patch_size)
    assert np.array_equal(back.tensor.data, g.tensor.data)


@settings(max_examples=200, deadline=None)
@given(
    st.tuples(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12)),
    st.integers(1, 7),
)
def test_window_count_formula_randomized(extents, m):
    h, w, d = extents
    g = pt.PatchGrid(Tensor(np.zeros((1, 1, h, w, d, 2))), patch_size=1)
    ws = pt.window_partition(g, m)
    expected = np.ceil(h / m) * np.ceil(w / m) * np.ceil(d / m)
    assert ws.n_windows == int(expected)
    back = pt.window_reverse(ws, 1)
    assert back.tensor.shape == g.tensor.shape


def test_groups_mark_padded_positions():
    g = pt.PatchGrid(Tensor(np.zeros((1, 1, 5, 5, 5, 2))), patch_size=1)
    ws = pt.window_partition(g, 4)
    assert ws.groups is not None
    assert ws.groups.shape == (8, 64)
    # total valid slots == grid size
    assert int((ws.groups >= 0).sum()) == 125


def test_shifted_groups_separate_wrapped_regions():
    g = pt.PatchGrid(Tensor(np.zeros((1, 1, 8, 8, 8, 2))), patch_size=1)
    ws = pt.window_partition(g, 4, shift=(2, 2, 2))
    # the corner window mixes all 8 wrapped octants: 8 distinct region ids
    corner = ws.groups[-1]
    assert len(set(corner.tolist())) == 8


# -- cyclic shift ------------------------------------------------------------------


def test_shift_amount_floor():
    assert pt.shift_amount(6) == 3
    assert pt.shift_amount(1) == 0


def test_cyclic_shift_roundtrip():
    g = grid(seed=5)
    back = pt.cyclic_unshift(pt.cyclic_shift(g, 6), 6)
    assert np.array_equal(back.tensor.data, g.tensor.data)


def test_cyclic_shift_m1_identity():
    g = grid(seed=6)
    out = pt.cyclic_shift(g, 1)
    assert out.tensor is g.tensor


def test_cyclic_shift_moves_by_half_window():
    data = np.zeros((1, 1, 6, 6, 6, 1))
    data[0, 0, 0, 0, 0, 0] = 1.0
    g = pt.PatchGrid(Tensor(data), patch_size=1)
    out = pt.cyclic_shift(g, 6)
    assert out.tensor.data[0, 0, 3, 3, 3, 0] == 1.0


# -- pooling -----------------------------------------------------------------------


def test_global_pool_constant():
    g = pt.PatchGrid(Tensor(np.full((2, 3, 4, 4, 4, 5), 1.25)), patch_size=1)
    out = pt.global_pool(g)
    assert out.shape == (2, 5)
    assert np.allclose(out.data, 1.25)


def test_global_pool_two_patch_average():
    data = np.zeros((1, 1, 2, 1, 1, 3))
    data[0, 0, 0] = 0.0
    data[0, 0, 1] = 2.0
    out = pt.global_pool(pt.PatchGrid(Tensor(data), patch_size=1))
    assert np.allclose(out.data, 1.0)


def test_gradients_flow_through_partition_chain():
    from fd import central_diff

    rng = np.random.default_rng(7)
    x = Parameter("x", rng.standard_normal((1, 2, 5, 5, 5, 3)))
    w = rng.standard_normal((1, 2, 5, 5, 5, 3))

    def forward():
        g = pt.PatchGrid(Tensor(x.data) if False else x, patch_size=1)
        ws = pt.window_partition(g, 4, shift=(2, 2, 2))
        back = pt.window_reverse(ws, 1)
        return (back.tensor * w).sum()

    forward().backward()
    fd = central_diff(lambda: float((x.data * w).sum()), x.data, step=1e-6)
    assert np.max(np.abs(fd - x.grad)) < 1e-8
