"""End-to-end desk-scale run: pretrain, kNN probe, one-shot fine-tune.

A compressed version of the full experiment (smaller dataset, fewer epochs);
takes roughly a minute on a laptop CPU.

Run: python demos/05_contrastive_pretraining.py
"""

import tempfile

from voxswin import train as tr
from voxswin.augment import AugmentationSpec
from voxswin.encoder import Model, ModelConfig
from voxswin.volumes import SyntheticSpec, generate_synthetic, standardize

print("== data: 5 classes, 15-frame sequences, heavy voxel noise ==")
data_spec = SyntheticSpec(n_classes=5, samples_per_class=12, grid=(15, 24, 24, 24),
                          blob_count=5, noise_sigma=0.5, seed=606)
samples = [standardize(v, target=(None, 24, 24, 24))
           for v in generate_synthetic(data_spec)]
train_s, val_s = tr.stratified_split(samples, 0.25, seed=606)
print(f"train {len(train_s)} / val {len(val_s)}")

cfg = ModelConfig.toy(frames=5, window=4)  # striding produces 5-frame views
spec = AugmentationSpec(noise="low", smoothing="low", striding=True, masking=True,
                        seed=41)
sched = tr.TrainSchedule.pretrain_default(epochs=8, eval_every=2, seed=41)

with tempfile.TemporaryDirectory() as tmp:
    print("\n== contrastive pretraining (NT-Xent, AdamW, warmup+cosine) ==")
    model = Model(cfg, seed=41)
    result = tr.pretrain(model, train_s, val_s, spec, sched, f"{tmp}/ssl")
    print(f"epoch losses: {[round(x, 3) for x in result.epoch_losses]}")
    print(f"kNN(k=1) accuracy: init {result.init_val_acc:.3f} -> "
          f"best {result.best_val_acc:.3f}")

    print("\n== one labeled sample per class: pretrained vs from-scratch ==")
    shots = []
    seen = set()
    for v in train_s:
        if v.label not in seen:
            seen.add(v.label)
            shots.append(v)
    ft_spec = AugmentationSpec(noise="low", smoothing="low", affine=True, seed=77)
    ft_sched = tr.TrainSchedule(epochs=15, base_lr=1e-3, batch_size=5,
                                eval_every=1, seed=99)
    warm = Model(cfg.with_classes(5), seed=91)
    r_warm = tr.finetune(warm, shots, val_s, ft_spec, ft_sched, f"{tmp}/warm",
                         init_checkpoint=result.best_path)
    cold = Model(cfg.with_classes(5), seed=91)
    r_cold = tr.finetune(cold, shots, val_s, ft_spec, ft_sched, f"{tmp}/cold")
    print(f"pretrained encoder: val acc {r_warm.best_val_acc:.3f} "
          f"macro-F1 {r_warm.best_val_f1:.3f}")
    print(f"random encoder:     val acc {r_cold.best_val_acc:.3f} "
          f"macro-F1 {r_cold.best_val_f1:.3f}")
    print(f"pretraining benefit: {100 * (r_warm.best_val_acc - r_cold.best_val_acc):.0f} "
          "accuracy points")
