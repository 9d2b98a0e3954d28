import numpy as np
import pytest

from voxswin import attention as at
from voxswin import tensor as tt
from voxswin.attention import AttentionParams, BlockParams, ConfigError
from voxswin.patching import PatchGrid, window_partition
from voxswin.tensor import Parameter, Tensor

from fd import central_diff


def make_params(c, heads, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    mk = lambda: Tensor(scale * rng.standard_normal((c, c)))
    return AttentionParams(wq=mk(), wk=mk(), wv=mk(), wo=mk(), heads=heads)


def dense_msa_reference(tokens, wq, wk, wv, wo, heads):
    """Brute-force O(S^2) attention with explicit loops; oracle path."""
    s, c = tokens.shape
    dh = c // heads
    head_outs = []
    for a in range(heads):
        cols = slice(a * dh, (a + 1) * dh)
        q, k, v = tokens @ wq[:, cols], tokens @ wk[:, cols], tokens @ wv[:, cols]
        out = np.zeros((s, dh))
        for i in range(s):
            logits = np.array([q[i] @ k[j] for j in range(s)]) / np.sqrt(dh)
            e = np.exp(logits - logits.max())
            weights = e / e.sum()
            out[i] = sum(weights[j] * v[j] for j in range(s))
        head_outs.append(out)
    return np.concatenate(head_outs, axis=1) @ wo


def windows_from(data, m, shift=(0, 0, 0)):
    g = PatchGrid(Tensor(data), patch_size=1)
    return window_partition(g, m, shift)


# -- spatial --------------------------------------------------------------------


def test_single_token_window_is_value_path():
    c, heads = 8, 2
    rng = np.random.default_rng(1)
    data = rng.standard_normal((1, 3, 1, 1, 1, c))
    p = make_params(c, heads, seed=2)
    ws = windows_from(data, 1)
    out = at.spatial_window_attention(ws, p)
    want = data @ p.wv.data @ p.wo.data  # softmax over one key == 1
    assert np.allclose(out.windows.data, want, atol=1e-12)


def test_two_identical_tokens_average_equally():
    c, heads = 6, 3
    rng = np.random.default_rng(3)
    token = rng.standard_normal(c)
    data = np.broadcast_to(token, (1, 1, 2, 1, 1, c)).copy()
    p = make_params(c, heads, seed=4)
    out = at.spatial_window_attention(windows_from(data, 2), p)
    # weights are exactly (0.5, 0.5); both outputs equal the value path
    want = token @ p.wv.data @ p.wo.data
    assert np.allclose(out.windows.data[0, 0, 0, :, 0, 0], np.stack([want, want]),
                       atol=1e-12)


def test_spatial_matches_brute_force_3cubed():
    c, heads = 4, 1
    rng = np.random.default_rng(5)
    data = rng.standard_normal((1, 2, 3, 3, 3, c))
    p = make_params(c, heads, seed=6)
    out = at.spatial_window_attention(windows_from(data, 3), p)
    for t in range(2):
        tokens = data[0, t].reshape(27, c)
        want = dense_msa_reference(tokens, p.wq.data, p.wk.data, p.wv.data,
                                   p.wo.data, heads)
        got = out.windows.data[0, 0, t].reshape(27, c)
        assert np.max(np.abs(got - want)) < 1e-12


def test_spatial_matches_brute_force_multihead_windows():
    c, heads = 8, 2
    rng = np.random.default_rng(7)
    data = rng.standard_normal((2, 2, 4, 4, 4, c))
    p = make_params(c, heads, seed=8)
    out = at.spatial_window_attention(windows_from(data, 2), p)
    # check one arbitrary window against the loop oracle
    ws = windows_from(data, 2)
    b, w, t = 1, 5, 0
    tokens = ws.windows.data[b, w, t].reshape(8, c)
    want = dense_msa_reference(tokens, p.wq.data, p.wk.data, p.wv.data, p.wo.data, heads)
    got = out.windows.data[b, w, t].reshape(8, c)
    assert np.max(np.abs(got - want)) < 1e-12


def test_spatial_locality_bit_exact():
    c, heads = 4, 2
    rng = np.random.default_rng(9)
    data = rng.standard_normal((1, 3, 4, 4, 4, c))
    p = make_params(c, heads, seed=10)
    base = at.spatial_window_attention(windows_from(data, 2), p).windows.data
    # perturb a token in another window AND another frame
    bumped = data.copy()
    bumped[0, 2, 3, 3, 3, :] += 13.0
    out = at.spatial_window_attention(windows_from(bumped, 2), p).windows.data
    # window 0 contains positions 0..1 on each axis; frames 0..1 untouched
    assert np.array_equal(base[:, 0, :2], out[:, 0, :2])


def test_padded_keys_get_zero_weight():
    groups = np.array([[0, 0, -1]])
    mask = at.groups_to_mask(groups)
    scores = Tensor(np.random.default_rng(11).standard_normal((1, 1, 1, 1, 3, 3)))
    w = tt.softmax(scores + mask, axis=-1).data
    # valid queries (rows 0, 1) place exactly zero weight on the padded key;
    # the padded query row is garbage by construction and gets cropped away
    assert np.all(w[..., :2, 2] == 0.0)
    assert np.max(np.abs(w.sum(-1) - 1.0)) < 1e-12


def test_head_divisibility_config_error():
    p = make_params(6, 4, seed=12)
    data = np.zeros((1, 1, 2, 2, 2, 6))
    with pytest.raises(ConfigError):
        at.spatial_window_attention(windows_from(data, 2), p)


def test_permutation_equivariance_within_window():
    c, heads = 4, 2
    rng = np.random.default_rng(13)
    data = rng.standard_normal((1, 1, 2, 2, 2, c))
    p = make_params(c, heads, seed=14)
    base = at.spatial_window_attention(windows_from(data, 2), p).windows.data
    perm = rng.permutation(8)
    permuted = data.reshape(1, 1, 8, c)[:, :, perm].reshape(data.shape)
    out = at.spatial_window_attention(windows_from(permuted, 2), p).windows.data
    assert np.allclose(out.reshape(8, c), base.reshape(8, c)[perm], atol=1e-12)


# -- temporal -------------------------------------------------------------------


def test_temporal_t1_value_path():
    c, heads = 8, 2
    rng = np.random.default_rng(15)
    data = rng.standard_normal((1, 1, 2, 2, 2, c))
    p = make_params(c, heads, seed=16)
    out = at.temporal_attention(PatchGrid(Tensor(data), 1), p)
    want = data @ p.wv.data @ p.wo.data
    assert np.allclose(out.tensor.data, want, atol=1e-12)


def test_temporal_constant_input_constant_output():
    c, heads = 6, 2
    rng = np.random.default_rng(17)
    frame = rng.standard_normal((1, 1, 3, 3, 3, c))
    data = np.repeat(frame, 4, axis=1)
    p = make_params(c, heads, seed=18)
    out = at.temporal_attention(PatchGrid(Tensor(data), 1), p).tensor.data
    for t in range(1, 4):
        assert np.allclose(out[:, t], out[:, 0], atol=1e-12)


def test_temporal_matches_brute_force():
    c, heads = 4, 2
    rng = np.random.default_rng(19)
    data = rng.standard_normal((1, 4, 2, 2, 2, c))
    p = make_params(c, heads, seed=20)
    out = at.temporal_attention(PatchGrid(Tensor(data), 1), p).tensor.data
    for pos in [(0, 0, 0), (1, 0, 1), (1, 1, 1)]:
        tokens = data[0, :, pos[0], pos[1], pos[2], :]
        want = dense_msa_reference(tokens, p.wq.data, p.wk.data, p.wv.data,
                                   p.wo.data, heads)
        assert np.max(np.abs(out[0, :, pos[0], pos[1], pos[2], :] - want)) < 1e-12


def test_temporal_locality_bit_exact():
    c, heads = 4, 1
    rng = np.random.default_rng(21)
    data = rng.standard_normal((1, 3, 2, 2, 2, c))
    p = make_params(c, heads, seed=22)
    base = at.temporal_attention(PatchGrid(Tensor(data), 1), p).tensor.data
    bumped = data.copy()
    bumped[0, :, 1, 1, 1, :] += 5.0
    out = at.temporal_attention(PatchGrid(Tensor(bumped), 1), p).tensor.data
    assert np.array_equal(base[0, :, 0, 0, 0], out[0, :, 0, 0, 0])


# -- block pair ------------------------------------------------------------------


def zero_block_params(c, heads):
    z = lambda shape: Tensor(np.zeros(shape))
    ln = lambda: (Tensor(np.ones(c)), Tensor(np.zeros(c)))
    attn = lambda: AttentionParams(z((c, c)), z((c, c)), z((c, c)), z((c, c)), heads)
    mlp = lambda: (z((c, 4 * c)), z(4 * c), z((4 * c, c)), z(c))
    return BlockParams(norm_sp=ln(), spatial=attn(), norm_mlp_sp=ln(), mlp_sp=mlp(),
                       norm_t=ln(), temporal=attn(), norm_mlp_t=ln(), mlp_t=mlp())


def random_block_params(c, heads, rng, scale=0.3, param=False):
    idx = [0]

    def mk(shape):
        idx[0] += 1
        data = scale * rng.standard_normal(shape)
        return Parameter(f"p{idx[0]}", data) if param else Tensor(data)

    ln = lambda: (mk(c) * 0 + 1.0, mk(c) * 0.0) if not param else (
        Parameter(f"g{idx[0]}", np.ones(c)), Parameter(f"b{idx[0]}", np.zeros(c)))
    attn = lambda: AttentionParams(mk((c, c)), mk((c, c)), mk((c, c)), mk((c, c)), heads)
    mlp = lambda: (mk((c, 4 * c)), mk(4 * c), mk((4 * c, c)), mk(c))
    return BlockParams(norm_sp=ln(), spatial=attn(), norm_mlp_sp=ln(), mlp_sp=mlp(),
                       norm_t=ln(), temporal=attn(), norm_mlp_t=ln(), mlp_t=mlp())


def test_block_pair_zero_weights_is_identity():
    c, heads = 8, 2
    rng = np.random.default_rng(23)
    data = rng.standard_normal((1, 2, 4, 4, 4, c))
    pair = (zero_block_params(c, heads), zero_block_params(c, heads))
    out = at.divided_block_pair(PatchGrid(Tensor(data), 1), pair, m=2)
    assert np.array_equal(out.tensor.data, data)


def test_block_pair_preserves_shape():
    c, heads = 8, 4
    rng = np.random.default_rng(24)
    data = rng.standard_normal((2, 3, 8, 8, 8, c))
    pair = (random_block_params(c, heads, rng), random_block_params(c, heads, rng))
    out = at.divided_block_pair(PatchGrid(Tensor(data), 1), pair, m=4)
    assert out.tensor.shape == (2, 3, 8, 8, 8, c)


def test_block_pair_shifted_wq_gradient_matches_fd():
    c, heads = 4, 2
    rng = np.random.default_rng(25)
    data = rng.standard_normal((1, 2, 4, 4, 4, c))
    w = rng.standard_normal((1, 2, 4, 4, 4, c))
    pair = (random_block_params(c, heads, rng), random_block_params(c, heads, rng))
    wq = Parameter("wq", pair[1].spatial.wq.data.copy())
    pair[1].spatial.wq = wq

    def loss_tensor():
        out = at.divided_block_pair(PatchGrid(Tensor(data), 1), pair, m=2)
        return (out.tensor * w).sum()

    loss_tensor().backward()
    fd = central_diff(lambda: loss_tensor().item(), wq.data, step=1e-4)
    scale = max(np.max(np.abs(fd)), 1e-8)
    assert np.max(np.abs(fd - wq.grad)) / scale < 1e-3


def test_effective_window_and_shift_clamping():
    assert at.effective_window(6, (4, 4, 4)) == 4
    assert at.block_shift(4, (4, 4, 4), shifted=True) == (0, 0, 0)
    assert at.block_shift(3, (6, 6, 3), shifted=True) == (1, 1, 0)
    assert at.block_shift(6, (16, 16, 16), shifted=True) == (3, 3, 3)


# -- joint 4D ---------------------------------------------------------------------


def test_joint_d1_equals_value_path():
    c, heads = 4, 2
    rng = np.random.default_rng(26)
    data = rng.standard_normal((1, 1, 2, 2, 2, c))
    p = make_params(c, heads, seed=27)
    out = at.joint_4d_window_attention(PatchGrid(Tensor(data), 1), p, d=1)
    want = data @ p.wv.data @ p.wo.data
    assert np.allclose(out.tensor.data, want, atol=1e-12)


def test_joint_window_token_counts():
    assert 4**4 == 256   # joint window, d=4
    assert 6**3 == 216   # divided spatial window, M=6


def test_joint_errors_when_t_below_d():
    p = make_params(4, 2)
    g = PatchGrid(Tensor(np.zeros((1, 2, 4, 4, 4, 4))), 1)
    with pytest.raises(Exception):
        at.joint_4d_window_attention(g, p, d=4)


def test_joint_matches_brute_force_on_full_window():
    c, heads = 4, 1
    rng = np.random.default_rng(28)
    data = rng.standard_normal((1, 2, 2, 2, 2, c))
    p = make_params(c, heads, seed=29)
    out = at.joint_4d_window_attention(PatchGrid(Tensor(data), 1), p, d=2)
    tokens = data.reshape(16, c)
    want = dense_msa_reference(tokens, p.wq.data, p.wk.data, p.wv.data, p.wo.data, heads)
    assert np.max(np.abs(out.tensor.data.reshape(16, c) - want)) < 1e-12


def test_joint_preserves_shape_with_padding():
    c, heads = 4, 2
    rng = np.random.default_rng(30)
    data = rng.standard_normal((1, 3, 3, 3, 3, c))
    p = make_params(c, heads, seed=31)
    out = at.joint_4d_window_attention(PatchGrid(Tensor(data), 1), p, d=2)
    assert out.tensor.shape == data.shape
