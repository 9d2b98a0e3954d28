"""Analytic attention cost curves and the instrumented forward-pass probe.

Run: python demos/06_attention_cost.py
"""

from voxswin import costmodel as cm
from voxswin.encoder import ModelConfig

cfg = ModelConfig()  # the published benchmark shape: (1, 1, 96, 96, 96, 15)

print("== activation bytes vs window size (half precision) ==")
print(f"{'window':>7} {'divided':>16} {'joint 4-D':>16} {'ratio':>8}")
for w in (2, 4, 6):
    divided = cm.attention_cost(cfg, "divided", window=w).total_activation_bytes
    joint = cm.attention_cost(cfg, "joint4d", window=w).total_activation_bytes
    print(f"{w:>7} {divided:>16,} {joint:>16,} {joint / divided:>8.2f}")
print("note the crossover: at window 2 the joint model is cheaper (the "
      "published device numbers show the same flip: 859 vs 1207 MiB), while "
      "at window 6 the d^8 law dominates (10021 vs 2343 MiB ordering).")

print("\n== growth laws per window ==")
s2 = cm.attention_cost(cfg, "divided", window=2).stages[0].per_layer[0]
s4 = cm.attention_cost(cfg, "divided", window=4).stages[0].per_layer[0]
j2 = cm.attention_cost(cfg, "joint4d", window=2).stages[0].per_layer[0]
j4 = cm.attention_cost(cfg, "joint4d", window=4).stages[0].per_layer[0]
print(f"divided score elements/window: {s2.score_elements_per_window} -> "
      f"{s4.score_elements_per_window} (x{s4.score_elements_per_window // s2.score_elements_per_window}, M^6 law)")
print(f"joint score elements/window:   {j2.score_elements_per_window} -> "
      f"{j4.score_elements_per_window} (x{j4.score_elements_per_window // j2.score_elements_per_window}, d^8 law)")

print("\n== full stage table, window 6 ==")
reports = [cm.attention_cost(cfg, m, window=6) for m in ("divided", "joint4d")]
print(cm.format_report_table(reports))

print("== instrumented probe on the toy config ==")
toy = ModelConfig.toy(window=4)
rep = cm.attention_cost(toy, "divided")
probe = cm.empirical_probe(toy, "divided")
analytic_scores = [lc.score_elements for s in rep.stages
                   for _ in range(s.layers) for lc in s.per_layer]
print(f"analytic score elements per call: {analytic_scores[:6]} ...")
print(f"probed  score elements per call: {probe.score_elements()[:6]} ...")
print("exact match:", probe.score_elements() == analytic_scores)
total_analytic = rep.total_activation_elements * rep.precision_bytes
print(f"probe total bytes / analytic total bytes: "
      f"{probe.total_bytes / total_analytic:.3f}")
