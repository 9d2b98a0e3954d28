"""Flat ``key = value`` run configuration files.

One key per line, ``#`` starts a comment, sections are dotted prefixes:
``model.*`` (architecture), ``train.*`` (schedule), ``augment.*``
(augmentation strategies), ``data.*`` (dataset paths and splits). Every
field of ModelConfig / TrainSchedule / AugmentationSpec is addressable.
"""

from __future__ import annotations

from voxswin.augment import AugmentationSpec
from voxswin.encoder import ModelConfig


class ConfigFileError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(d: dict) -> str:
    return "\n".join(f"{k} = {v}" for k, v in d.items()) + "\n"


def _bool(s: str) -> bool:
    if s.lower() in ("true", "on", "yes", "1"):
        return True
    if s.lower() in ("false", "off", "no", "0"):
        return False
    raise ConfigFileError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


# -- model section ------------------------------------------------------------


def model_to_kv(cfg: ModelConfig) -> dict[str, str]:
    d = {
        "model.extent": cfg.extent,
        "model.patch_size": cfg.patch_size,
        "model.embed_dim": cfg.embed_dim,
        "model.window": cfg.window,
        "model.depths": ",".join(map(str, cfg.depths)),
        "model.heads": ",".join(map(str, cfg.heads)),
        "model.frames": cfg.frames,
        "model.pos_embed": str(cfg.pos_embed).lower(),
        "model.mlp_ratio": cfg.mlp_ratio,
        "model.projector_dim": cfg.projector_dim,
    }
    if cfg.n_classes is not None:
        d["model.n_classes"] = cfg.n_classes
    return {k: str(v) for k, v in d.items()}


def model_from_kv(kv: dict[str, str], defaults: ModelConfig | None = None) -> ModelConfig:
    base = defaults or ModelConfig()
    get = lambda key, cast, fallback: cast(kv[key]) if key in kv else fallback
    return ModelConfig(
        extent=get("model.extent", int, base.extent),
        patch_size=get("model.patch_size", int, base.patch_size),
        embed_dim=get("model.embed_dim", int, base.embed_dim),
        window=get("model.window", int, base.window),
        depths=get("model.depths", _ints, base.depths),
        heads=get("model.heads", _ints, base.heads),
        frames=get("model.frames", int, base.frames),
        pos_embed=get("model.pos_embed", _bool, base.pos_embed),
        mlp_ratio=get("model.mlp_ratio", int, base.mlp_ratio),
        projector_dim=get("model.projector_dim", int, base.projector_dim),
        n_classes=get("model.n_classes", int, base.n_classes),
    )


# -- augment section ------------------------------------------------------------


def augment_to_kv(spec: AugmentationSpec) -> dict[str, str]:
    return {
        "augment.noise": spec.noise,
        "augment.smoothing": spec.smoothing,
        "augment.affine": str(spec.affine).lower(),
        "augment.masking": str(spec.masking).lower(),
        "augment.striding": str(spec.striding).lower(),
        "augment.seed": str(spec.seed),
    }


def augment_from_kv(kv: dict[str, str],
                    defaults: AugmentationSpec | None = None) -> AugmentationSpec:
    base = defaults or AugmentationSpec()
    get = lambda key, cast, fallback: cast(kv[key]) if key in kv else fallback
    return AugmentationSpec(
        noise=get("augment.noise", str, base.noise),
        smoothing=get("augment.smoothing", str, base.smoothing),
        affine=get("augment.affine", _bool, base.affine),
        masking=get("augment.masking", _bool, base.masking),
        striding=get("augment.striding", _bool, base.striding),
        seed=get("augment.seed", int, base.seed),
    )


# -- train section ----------------------------------------------------------------


def schedule_to_kv(sched) -> dict[str, str]:
    return {
        "train.epochs": str(sched.epochs),
        "train.base_lr": repr(sched.base_lr),
        "train.batch_size": str(sched.batch_size),
        "train.warmup_epochs": str(sched.warmup_epochs),
        "train.weight_decay": repr(sched.weight_decay),
        "train.clip_norm": repr(sched.clip_norm),
        "train.seed": str(sched.seed),
        "train.eval_every": str(sched.eval_every),
        "train.workers": str(sched.workers),
    }


def schedule_from_kv(kv: dict[str, str], defaults=None):
    from voxswin.train import TrainSchedule

    base = defaults or TrainSchedule()
    get = lambda key, cast, fallback: cast(kv[key]) if key in kv else fallback
    return TrainSchedule(
        epochs=get("train.epochs", int, base.epochs),
        base_lr=get("train.base_lr", float, base.base_lr),
        batch_size=get("train.batch_size", int, base.batch_size),
        warmup_epochs=get("train.warmup_epochs", int, base.warmup_epochs),
        weight_decay=get("train.weight_decay", float, base.weight_decay),
        clip_norm=get("train.clip_norm", float, base.clip_norm),
        seed=get("train.seed", int, base.seed),
        eval_every=get("train.eval_every", int, base.eval_every),
        workers=get("train.workers", int, base.workers),
    )


def read_config_file(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv(fh.read())


def write_config_file(path, kv: dict[str, str]) -> None:
    with open(path, "w") as fh:
        fh.write(format_kv(kv))
