"""Named-tensor checkpoint container: text manifest + raw binary blob.

File layout: one manifest record per tensor (``name f64 d0,d1,... offset
nbytes``, offsets relative to the blob start), a blank line, then the
concatenated little-endian float64 data. The model configuration is written
alongside as ``<path>.config`` (flat key = value). Optimizer state rides in
the same container under ``optim.`` names. Writes are atomic
(temp file + rename); loads stage everything and validate before any model
weight is touched.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from voxswin import config as cfgmod
from voxswin.encoder import ENCODER_PREFIXES, Model, ModelConfig

DTYPE_TAG = "f64"


class CheckpointError(ValueError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointSchemaError(CheckpointError):
    pass


def save_checkpoint(path, model: Model, optimizer_state: dict[str, np.ndarray] | None = None,
                    step: int | None = None) -> None:
    tensors: dict[str, np.ndarray] = {n: p.data for n, p in model.params.items()}
    if optimizer_state:
        for name, arr in optimizer_state.items():
            tensors[f"optim.{name}"] = np.asarray(arr, dtype=np.float64)
    if step is not None:
        tensors["optim.step"] = np.array([float(step)])

    records = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        raw = arr.astype("<f8").tobytes()
        shape = ",".join(map(str, arr.shape)) if arr.ndim else "scalar"
        records.append(f"{name} {DTYPE_TAG} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    payload = ("\n".join(records) + "\n\n").encode() + b"".join(blobs)

    path = str(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    cfgmod.write_config_file(path + ".config", cfgmod.model_to_kv(model.cfg))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig | None]:
    """Parse a checkpoint into name -> array, plus its sidecar config if present."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CheckpointCorruptError("no manifest/blob separator found")
    manifest, blob = raw[:sep].decode(), raw[sep + 2:]

    tensors: dict[str, np.ndarray] = {}
    for line in manifest.splitlines():
        if not line.strip():
            continue
        try:
            name, tag, shape_s, offset_s, nbytes_s = line.split(" ")
            offset, nbytes = int(offset_s), int(nbytes_s)
        except ValueError as exc:
            raise CheckpointCorruptError(f"bad manifest record {line!r}") from exc
        if tag != DTYPE_TAG:
            raise CheckpointSchemaError(f"unknown dtype tag {tag!r} for {name}")
        if name in tensors:
            raise CheckpointSchemaError(f"duplicate tensor name {name}")
        if offset + nbytes > len(blob):
            raise CheckpointCorruptError(
                f"blob truncated: {name} needs bytes up to {offset + nbytes}, "
                f"blob has {len(blob)}")
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        arr = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=offset)
        expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if arr.size != expected:
            raise CheckpointCorruptError(f"{name}: shape {shape} != {arr.size} elements")
        # astype copies: frombuffer views are read-only, weights must stay writable
        tensors[name] = arr.reshape(shape).astype(np.float64)

    cfg = None
    cfg_path = str(path) + ".config"
    if os.path.exists(cfg_path):
        cfg = cfgmod.model_from_kv(cfgmod.read_config_file(cfg_path))
    return tensors, cfg


def _encoder_fields_match(a: ModelConfig, b: ModelConfig) -> bool:
    keys = ("extent", "patch_size", "embed_dim", "window", "depths", "heads",
            "frames", "pos_embed", "mlp_ratio")
    return all(getattr(a, k) == getattr(b, k) for k in keys)


def load_checkpoint(model: Model, path, encoder_only: bool = False) -> dict[str, np.ndarray]:
    """Restore weights; everything is validated before any weight is written.

    ``encoder_only`` restores just the encoder parameters (projector and head
    stay freshly initialized), the partial-load mode used for fine-tuning.
    Returns any optimizer-state tensors found (without the ``optim.`` prefix).
    """
    tensors, stored_cfg = read_checkpoint(path)
    if stored_cfg is not None:
        if encoder_only:
            if not _encoder_fields_match(stored_cfg, model.cfg):
                raise CheckpointSchemaError("encoder architecture mismatch between "
                                            "checkpoint config and model config")
        elif stored_cfg != model.cfg:
            raise CheckpointSchemaError("checkpoint config differs from model config")

    if encoder_only:
        wanted = [n for n in model.params if n.startswith(ENCODER_PREFIXES)]
    else:
        wanted = list(model.params)

    staged: dict[str, np.ndarray] = {}
    for name in wanted:
        if name not in tensors:
            raise CheckpointSchemaError(f"checkpoint missing tensor {name}")
        arr = tensors[name]
        if arr.shape != model.params[name].shape:
            raise CheckpointSchemaError(
                f"{name}: checkpoint shape {arr.shape} != model {model.params[name].shape}")
        staged[name] = arr
    for name in tensors:
        if not name.startswith("optim.") and name not in model.params:
            if not encoder_only:
                raise CheckpointSchemaError(f"checkpoint tensor {name} unknown to model")

    for name, arr in staged.items():
        model.params[name].data = np.ascontiguousarray(arr)

    return {n[len("optim."):]: a for n, a in tensors.items() if n.startswith("optim.")}
