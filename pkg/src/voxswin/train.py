"""Contrastive loss, optimizer, schedules, kNN probe, and training loops.

The NT-Xent loss ships in two modes. ``standard`` is the conventional
SimCLR form: for every row, the denominator sums over all 2B-1 other rows
including the positive, so the loss is nonnegative. ``as-written`` follows
the printed per-pair formula literally: the denominator for anchor
z_{2i-1} sums exp(sim(z_{2i-1}, z_{2j})/tau) over the *even-indexed* rows
with j != i only, which excludes the positive and permits negative losses
(the orthogonal-pairs fixture evaluates to -10). Training defaults to
``standard``; the literal mode exists for fidelity and is exercised by the
test suite.

Metric logs are append-only tab-separated text with one record per line:
``phase  step  epoch  lr  loss  metric  value`` (empty fields where not
applicable). Runs with identical seeds and configs produce byte-identical
logs and checkpoints on one platform.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from voxswin import tensor as tt
from voxswin.augment import AugmentationSpec, apply_view
from voxswin.checkpoint import load_checkpoint, save_checkpoint
from voxswin.encoder import Model
from voxswin.tensor import Parameter, Tensor
from voxswin.volumes import Volume4D, sample_frames


@dataclass
class TrainSchedule:
    epochs: int = 50
    base_lr: float = 1e-3
    batch_size: int = 6
    warmup_epochs: int = 1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 5
    workers: int = 1

    @classmethod
    def pretrain_default(cls, **overrides) -> "TrainSchedule":
        """50 epochs, lr 0.001, batch 6."""
        kwargs = dict(epochs=50, base_lr=1e-3, batch_size=6)
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def finetune_small(cls, **overrides) -> "TrainSchedule":
        """Cross-dataset-style fine-tuning: 20 epochs, lr 5e-5, batch 12."""
        kwargs = dict(epochs=20, base_lr=5e-5, batch_size=12)
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def finetune_heldout(cls, **overrides) -> "TrainSchedule":
        """Held-out-subject-style fine-tuning: 15 epochs, lr 1e-4, batch 12."""
        kwargs = dict(epochs=15, base_lr=1e-4, batch_size=12)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class ContrastiveBatch:
    """Projected views, rows ordered (z_1, z_2, ..., z_{2B}): pair i sits at
    rows (2i, 2i+1) zero-based."""

    views: Tensor
    tau: float = 0.1

    def __post_init__(self):
        if self.views.ndim != 2 or self.views.shape[0] % 2:
            raise ValueError(f"need an even number of view rows, got {self.views.shape}")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


# -- NT-Xent ------------------------------------------------------------------------


def _pair_index(n: int) -> np.ndarray:
    idx = np.arange(n)
    return idx + 1 - 2 * (idx % 2)


def nt_xent(batch: ContrastiveBatch | Tensor, tau: float = 0.1,
            mode: str = "standard") -> Tensor:
    """Mean contrastive loss over all 2B view rows."""
    if isinstance(batch, ContrastiveBatch):
        z, tau = batch.views, batch.tau
    else:
        z = batch
    n = z.shape[0]
    if n % 2 or n < 2:
        raise ValueError(f"need interleaved view pairs, got {n} rows")
    norms = np.linalg.norm(z.data, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-6:
        raise ValueError("nt_xent expects L2-normalized rows")
    if mode not in ("standard", "as-written"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "as-written" and n < 4:
        raise ValueError("as-written mode needs B >= 2: its denominator is empty at B=1")

    logits = tt.matmul(z, z.transpose((1, 0))) * (1.0 / tau)
    pair = _pair_index(n)
    pos_onehot = np.zeros((n, n))
    pos_onehot[np.arange(n), pair] = 1.0

    if mode == "standard":
        denom_mask = 1.0 - np.eye(n)
    else:
        # anchor z_{2i-1} (even 0-based rows) sums over even-indexed z_{2j}
        # (odd 0-based columns), j != i; the mirrored term swaps parities
        denom_mask = np.zeros((n, n))
        rows = np.arange(n)
        odd_cols = (np.arange(n) % 2) == 1
        denom_mask[rows[::2][:, None], np.where(odd_cols)[0][None, :]] = 1.0
        denom_mask[rows[1::2][:, None], np.where(~odd_cols)[0][None, :]] = 1.0
        denom_mask[np.arange(n), pair] = 0.0

    # per-row logsumexp over the masked denominator; max is detached
    with np.errstate(invalid="ignore"):
        row_max = np.where(denom_mask > 0, logits.data, -np.inf).max(axis=1, keepdims=True)
    expd = tt.exp(logits - row_max) * denom_mask
    lse = tt.log(expd.sum(axis=1)) + row_max[:, 0]
    pos = (logits * pos_onehot).sum(axis=1)
    return (lse - pos).mean()


# -- optimizer / schedule -------------------------------------------------------------


def adamw_init(params: dict[str, Parameter]) -> dict:
    return {
        "step": 0,
        "m": {n: np.zeros(p.shape) for n, p in params.items()},
        "v": {n: np.zeros(p.shape) for n, p in params.items()},
    }


def adamw_step(params: dict[str, Parameter], state: dict, lr: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01) -> None:
    """Decoupled-weight-decay Adam; parameters with no gradient are skipped."""
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= lr * (update + weight_decay * p.data)


def clip_global_norm(params: dict[str, Parameter], max_norm: float) -> float:
    total = np.sqrt(sum(float((p.grad**2).sum())
                        for p in params.values() if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then cosine annealing to 0 at total_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


# -- evaluation ------------------------------------------------------------------------


def knn_validate(train_feats: np.ndarray, train_labels, val_feats: np.ndarray,
                 val_labels, k: int = 1) -> float:
    """k-NN by cosine distance over encoder features; returns accuracy."""
    train_feats = np.asarray(train_feats, dtype=np.float64)
    val_feats = np.asarray(val_feats, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    if train_feats.size == 0 or val_feats.size == 0:
        raise ValueError("kNN needs nonempty train and validation sets")

    def unit(x):
        n = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.maximum(n, 1e-30)

    sims = unit(val_feats) @ unit(train_feats).T
    if k == 1:
        pred = train_labels[np.argmax(sims, axis=1)]
    else:
        top = np.argsort(-sims, axis=1)[:, :k]
        pred = np.array([np.bincount(train_labels[row]).argmax() for row in top])
    return float(np.mean(pred == val_labels))


def stratified_split(samples, val_fraction: float, seed: int):
    """Per-class shuffled train/val split; every class keeps >= 1 val sample."""
    by_class: dict[int, list] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    train, val = [], []
    for k in sorted(by_class):
        group = list(by_class[k])
        order = rng.permutation(len(group))
        n_val = max(1, int(round(val_fraction * len(group))))
        val.extend(group[i] for i in order[:n_val])
        train.extend(group[i] for i in order[n_val:])
    return train, val


def accuracy(pred, true) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    return float(np.mean(pred == true))


def macro_f1(pred, true, n_classes: int) -> float:
    """Unweighted mean of per-class F1; empty precision/recall counts as 0."""
    pred, true = np.asarray(pred), np.asarray(true)
    scores = []
    for k in range(n_classes):
        tp = int(np.sum((pred == k) & (true == k)))
        fp = int(np.sum((pred == k) & (true != k)))
        fn = int(np.sum((pred != k) & (true == k)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


# -- metric log --------------------------------------------------------------------


class MetricLog:
    """Append-only TSV: phase, step, epoch, lr, loss, metric, value."""

    def __init__(self, path):
        os.makedirs(os.path.dirname(str(path)) or ".", exist_ok=True)
        self._fh = open(path, "w")

    def step(self, phase, step, epoch, lr, loss):
        self._write(phase, step, epoch, repr(float(lr)), repr(float(loss)), "", "")

    def metric(self, phase, step, epoch, name, value):
        self._write(phase, step, epoch, "", "", name, repr(float(value)))

    def _write(self, *fields):
        self._fh.write("\t".join(str(f) for f in fields) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


# -- batch construction ------------------------------------------------------------


def _fit_frames(v: Volume4D, frames: int, rng: np.random.Generator) -> Volume4D:
    if v.frames == frames:
        return v
    idx = sample_frames(v.frames, frames, rng)
    return v.with_data(np.ascontiguousarray(v.voxels()[idx]))


def training_view(v: Volume4D, spec: AugmentationSpec, seed, frames: int) -> Volume4D:
    """One augmented view with exactly ``frames`` frames.

    Striding performs the temporal reduction itself (and must land on
    ``frames``); otherwise an order-preserving random subset is taken first.
    """
    rng = np.random.default_rng(seed)
    if not spec.striding:
        v = _fit_frames(v, frames, rng)
    out = apply_view(v, spec, rng)
    if out.frames != frames:
        raise ValueError(
            f"augmented view has {out.frames} frames, model expects {frames}; "
            "with striding on, configure the model for 5 frames")
    return out


def _view_batch(samples, spec, seeds, frames, workers):
    jobs = [(v, spec, seed, frames) for v, seed in zip(samples, seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            views = list(pool.map(lambda j: training_view(*j), jobs))
    else:
        views = [training_view(*j) for j in jobs]
    return np.stack([v.voxels() for v in views], axis=0)


def eval_frames_batch(samples, frames: int, seed: int = 0) -> np.ndarray:
    """Deterministic unaugmented inputs for feature extraction."""
    out = []
    for i, v in enumerate(samples):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        out.append(_fit_frames(v, frames, rng).voxels())
    return np.stack(out, axis=0)


def encode_features(model: Model, samples, batch: int = 8, seed: int = 0) -> np.ndarray:
    """(N, encoder_dim) features of unaugmented samples, batched, no grad."""
    feats = []
    with tt.no_grad():
        for lo in range(0, len(samples), batch):
            chunk = samples[lo:lo + batch]
            x = eval_frames_batch(chunk, model.cfg.frames, seed=seed)
            feats.append(model.encode(x).data)
    return np.concatenate(feats, axis=0)


def _check_finite_loss(loss_value, step, lr, params):
    if np.isfinite(loss_value):
        return
    gnorms = {n: (float(np.abs(p.grad).max()) if p.grad is not None else None)
              for n, p in list(params.items())[:5]}
    raise RuntimeError(
        f"divergence: non-finite loss {loss_value} at step {step} (lr {lr}); "
        f"sample grad magnitudes {gnorms}")


# -- pretraining ---------------------------------------------------------------------


@dataclass
class PretrainResult:
    best_val_acc: float
    init_val_acc: float
    final_val_acc: float
    losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    best_path: str = ""
    last_path: str = ""


def pretrain(model: Model, train_samples, val_samples, spec: AugmentationSpec,
             sched: TrainSchedule, out_dir, tau: float = 0.1,
             loss_mode: str = "standard") -> PretrainResult:
    """SimCLR-style contrastive pretraining with periodic kNN validation.

    Per step: sample a batch, build two augmented views per item, encode,
    project, NT-Xent, backward, clip, AdamW with warmup+cosine. Validation
    runs a k=1 cosine kNN on encoder features (train set as the database);
    the checkpoint with the best validation accuracy is retained.
    """
    os.makedirs(str(out_dir), exist_ok=True)
    log = MetricLog(os.path.join(str(out_dir), "metrics.log"))
    best_path = os.path.join(str(out_dir), "checkpoint_best.bin")
    last_path = os.path.join(str(out_dir), "checkpoint_last.bin")

    b = sched.batch_size
    steps_per_epoch = len(train_samples) // b
    if steps_per_epoch == 0:
        raise ValueError(f"batch size {b} exceeds training set {len(train_samples)}")
    total_steps = sched.epochs * steps_per_epoch
    warmup_steps = sched.warmup_epochs * steps_per_epoch
    opt = adamw_init(model.params)
    order_rng = np.random.default_rng(np.random.SeedSequence(sched.seed, spawn_key=(0,)))

    train_labels = np.array([v.label for v in train_samples])
    val_labels = np.array([v.label for v in val_samples])

    def knn_probe():
        tf = encode_features(model, train_samples, seed=sched.seed)
        vf = encode_features(model, val_samples, seed=sched.seed)
        return knn_validate(tf, train_labels, vf, val_labels, k=1)

    init_acc = knn_probe()
    log.metric("pretrain", 0, 0, "knn_acc", init_acc)
    best_acc = init_acc
    save_checkpoint(best_path, model, step=0)

    result = PretrainResult(best_val_acc=init_acc, init_val_acc=init_acc,
                            final_val_acc=init_acc, best_path=best_path,
                            last_path=last_path)
    step = 0
    for epoch in range(1, sched.epochs + 1):
        order = order_rng.permutation(len(train_samples))
        epoch_losses = []
        for bi in range(steps_per_epoch):
            items = [train_samples[i] for i in order[bi * b:(bi + 1) * b]]
            seeds = [np.random.SeedSequence(spec.seed, spawn_key=(epoch, step, j))
                     for j in range(2 * b)]
            views = []
            for j, v in enumerate(items):
                views.extend([(v, seeds[2 * j]), (v, seeds[2 * j + 1])])
            batch = _view_batch([v for v, _ in views], spec, [s for _, s in views],
                                model.cfg.frames, sched.workers)
            lr = lr_at(step, total_steps, warmup_steps, sched.base_lr)
            model.zero_grad()
            z = model.project(model.encode(batch))
            loss = nt_xent(z, tau=tau, mode=loss_mode)
            value = loss.item()
            _check_finite_loss(value, step, lr, model.params)
            loss.backward()
            clip_global_norm(model.params, sched.clip_norm)
            adamw_step(model.params, opt, lr, sched.betas, sched.eps,
                       sched.weight_decay)
            log.step("pretrain", step, epoch, lr, value)
            epoch_losses.append(value)
            result.losses.append(value)
            step += 1
        result.epoch_losses.append(float(np.mean(epoch_losses)))

        if epoch % sched.eval_every == 0 or epoch == sched.epochs:
            acc = knn_probe()
            log.metric("pretrain", step, epoch, "knn_acc", acc)
            result.final_val_acc = acc
            if acc > best_acc:
                best_acc = acc
                save_checkpoint(best_path, model, step=step)
    result.best_val_acc = best_acc
    save_checkpoint(last_path, model, step=step)
    log.close()
    return result


# -- fine-tuning ------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    n, k = logits.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), np.asarray(labels)] = 1.0
    row_max = logits.data.max(axis=1, keepdims=True)
    lse = tt.log(tt.exp(logits - row_max).sum(axis=1)) + row_max[:, 0]
    picked = (logits * onehot).sum(axis=1)
    return (lse - picked).mean()


@dataclass
class FinetuneResult:
    best_val_acc: float
    best_val_f1: float
    final_train_acc: float
    best_path: str = ""


def finetune(model: Model, train_samples, val_samples, spec: AugmentationSpec,
             sched: TrainSchedule, out_dir,
             init_checkpoint=None) -> FinetuneResult:
    """Supervised cross-entropy training of encoder + head.

    All encoder weights update (no freezing); ``init_checkpoint`` warm-starts
    the encoder via an encoder-only partial load.
    """
    if model.cfg.n_classes is None:
        raise ValueError("finetune needs a model with a classification head")
    for v in train_samples + val_samples:
        if v.label is None or not (0 <= v.label < model.cfg.n_classes):
            raise ValueError(f"label {v.label} outside 0..{model.cfg.n_classes - 1}")
    if init_checkpoint is not None:
        load_checkpoint(model, init_checkpoint, encoder_only=True)

    os.makedirs(str(out_dir), exist_ok=True)
    log = MetricLog(os.path.join(str(out_dir), "metrics.log"))
    best_path = os.path.join(str(out_dir), "checkpoint_best.bin")

    b = min(sched.batch_size, len(train_samples))
    steps_per_epoch = max(len(train_samples) // b, 1)
    total_steps = sched.epochs * steps_per_epoch
    warmup_steps = sched.warmup_epochs * steps_per_epoch
    opt = adamw_init(model.params)
    order_rng = np.random.default_rng(np.random.SeedSequence(sched.seed, spawn_key=(1,)))
    val_labels = np.array([v.label for v in val_samples])

    def evaluate():
        feats = encode_features(model, val_samples, seed=sched.seed)
        with tt.no_grad():
            logits = model.classify(Tensor(feats))
        pred = np.argmax(logits.data, axis=1)
        return (accuracy(pred, val_labels),
                macro_f1(pred, val_labels, model.cfg.n_classes))

    best_acc, best_f1 = -1.0, 0.0
    final_train_acc = 0.0
    step = 0
    for epoch in range(1, sched.epochs + 1):
        order = order_rng.permutation(len(train_samples))
        correct, seen = 0, 0
        for bi in range(steps_per_epoch):
            items = [train_samples[i] for i in order[bi * b:(bi + 1) * b]]
            labels = np.array([v.label for v in items])
            seeds = [np.random.SeedSequence(spec.seed, spawn_key=(10_000 + epoch, step, j))
                     for j in range(len(items))]
            batch = _view_batch(items, spec, seeds, model.cfg.frames, sched.workers)
            lr = lr_at(step, total_steps, warmup_steps, sched.base_lr)
            model.zero_grad()
            logits = model.classify(model.encode(batch))
            loss = cross_entropy(logits, labels)
            value = loss.item()
            _check_finite_loss(value, step, lr, model.params)
            loss.backward()
            clip_global_norm(model.params, sched.clip_norm)
            adamw_step(model.params, opt, lr, sched.betas, sched.eps,
                       sched.weight_decay)
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
            seen += len(items)
            log.step("finetune", step, epoch, lr, value)
            step += 1
        final_train_acc = correct / max(seen, 1)

        if val_samples:
            acc, f1 = evaluate()
            log.metric("finetune", step, epoch, "val_acc", acc)
            log.metric("finetune", step, epoch, "val_f1", f1)
            if acc > best_acc:
                best_acc, best_f1 = acc, f1
                save_checkpoint(best_path, model, step=step)
    if not val_samples:
        save_checkpoint(best_path, model, step=step)
        best_acc, best_f1 = final_train_acc, 0.0
    log.close()
    return FinetuneResult(best_val_acc=best_acc, best_val_f1=best_f1,
                          final_train_acc=final_train_acc, best_path=best_path)
