import numpy as np
import pytest

from voxswin import costmodel as cm
from voxswin.encoder import Model, ModelConfig


def paper_shape_config(window=6):
    # the published memory benchmark input: (1, 1, 96, 96, 96, 15)
    return ModelConfig(window=window)


def test_divided_window6_tokens_216():
    rep = cm.attention_cost(paper_shape_config(6), "divided")
    assert rep.stages[0].per_layer[0].tokens_per_window == 216


def test_joint_window4_tokens_256():
    rep = cm.attention_cost(paper_shape_config(4), "joint4d")
    assert rep.stages[0].per_layer[0].tokens_per_window == 256


def test_growth_laws_per_window():
    stage1 = lambda mode, w: cm.attention_cost(paper_shape_config(w), mode).stages[0]
    divided2 = stage1("divided", 2).per_layer[0].score_elements_per_window
    divided4 = stage1("divided", 4).per_layer[0].score_elements_per_window
    assert divided4 == 64 * divided2          # M^6 law: 2^6
    joint2 = stage1("joint4d", 2).per_layer[0].score_elements_per_window
    joint4 = stage1("joint4d", 4).per_layer[0].score_elements_per_window
    assert joint4 == 256 * joint2       # d^8 law: 2^8
    assert divided2 == 2**6 and joint2 == 2**8


def test_stage1_counts_by_hand():
    rep = cm.attention_cost(paper_shape_config(6), "divided")
    sp = rep.stages[0].per_layer[0]
    # 16^3 grid, M=6 -> padded 18^3, 27 windows, 216 tokens, T=15, 3 heads
    assert sp.windows == 27
    assert sp.slots == 27 * 15
    assert sp.score_elements == 27 * 15 * 3 * 216**2
    tm = rep.stages[0].per_layer[1]
    assert tm.score_elements == 16**3 * 3 * 15**2


def test_joint_counts_by_hand():
    rep = cm.attention_cost(paper_shape_config(6), "joint4d")
    jl = rep.stages[0].per_layer[0]
    # ceil(15/6)=3 temporal x 27 spatial windows of 6^4 tokens
    assert jl.windows == 81
    assert jl.score_elements == 81 * 3 * (6**4) ** 2


def test_joint_exceeds_divided_at_paper_shape_window6():
    divided = cm.attention_cost(paper_shape_config(6), "divided")
    joint = cm.attention_cost(paper_shape_config(6), "joint4d")
    assert joint.total_activation_bytes > divided.total_activation_bytes
    assert joint.stages[0].score_elements > divided.stages[0].score_elements


@pytest.mark.parametrize("d", [2, 4, 6])
def test_joint_windows_dominate_spatial_windows_sweep(d):
    # whenever the joint window holds more tokens than the spatial window
    # (d^4 > d^3), the windowed attention's score elements dominate
    divided = cm.attention_cost(paper_shape_config(d), "divided")
    joint = cm.attention_cost(paper_shape_config(d), "joint4d")
    divided_windowed = sum(s.layers * s.per_layer[0].score_elements for s in divided.stages)
    assert joint.total_score_elements > divided_windowed


def test_small_window_crossover_matches_published_measurement():
    # at 2x2x2 the published benchmark has the 4-D model *cheaper* (859 vs
    # 1207 MiB); the analytic model reproduces that ordering because the
    # per-position temporal term dominates at tiny windows, and the flip by
    # window 6 (10021 vs 2343 MiB) as the d^8 law takes over
    divided2 = cm.attention_cost(paper_shape_config(2), "divided")
    joint2 = cm.attention_cost(paper_shape_config(2), "joint4d")
    assert joint2.total_activation_bytes < divided2.total_activation_bytes
    divided6 = cm.attention_cost(paper_shape_config(6), "divided")
    joint6 = cm.attention_cost(paper_shape_config(6), "joint4d")
    assert joint6.total_activation_bytes > divided6.total_activation_bytes


def test_precision_scales_bytes():
    rep2 = cm.attention_cost(paper_shape_config(6), "divided", precision_bytes=2)
    rep8 = cm.attention_cost(paper_shape_config(6), "divided", precision_bytes=8)
    assert rep8.total_activation_bytes == 4 * rep2.total_activation_bytes
    with pytest.raises(ValueError):
        cm.attention_cost(paper_shape_config(6), "divided", precision_bytes=4)


def test_weight_elements_matches_builder():
    cfg = ModelConfig.toy(n_classes=5)
    model = Model(cfg)
    assert cm.weight_elements(cfg) == sum(p.size for p in model.params.values())


def test_report_is_pure():
    cfg = paper_shape_config(6)
    a = cm.attention_cost(cfg, "divided")
    b = cm.attention_cost(cfg, "divided")
    assert a.total_activation_bytes == b.total_activation_bytes
    assert a.total_flops == b.total_flops


def test_probe_score_elements_match_analytic_exactly():
    cfg = ModelConfig.toy(window=4)
    rep = cm.attention_cost(cfg, "divided")
    probe = cm.empirical_probe(cfg, "divided")
    # one analytic LayerCost per attention call, in call order
    per_call = [lc.score_elements for s in rep.stages
                for _ in range(s.layers) for lc in s.per_layer]
    assert probe.score_elements() == per_call


def test_probe_total_within_calibrated_band_of_analytic():
    for window in (2, 4):
        cfg = ModelConfig.toy(window=window)
        rep = cm.attention_cost(cfg, "divided")
        probe = cm.empirical_probe(cfg, "divided")
        layers_total = rep.total_activation_elements * rep.precision_bytes
        ratio = probe.total_bytes / layers_total
        assert 0.8 <= ratio <= 1.5


def test_probe_joint_mode_runs_when_frames_allow():
    cfg = ModelConfig.toy(frames=4, window=2)
    rep = cm.attention_cost(cfg, "joint4d")
    probe = cm.empirical_probe(cfg, "joint4d")
    per_call = [lc.score_elements for s in rep.stages
                for _ in range(s.layers) for lc in s.per_layer]
    assert probe.score_elements() == per_call


def test_table_and_tsv_render():
    cfg = ModelConfig.toy(window=4)
    reports = [cm.attention_cost(cfg, m) for m in ("divided", "joint4d")]
    table = cm.format_report_table(reports)
    assert "ordering:" in table and "divided" in table
    tsv = cm.report_to_tsv(reports[0])
    assert tsv.splitlines()[0].startswith("mode\tstage")
    assert "total" in tsv
