"""Command-line front end.

Subcommands: ``gen-synth``, ``pretrain``, ``finetune``, ``eval``,
``bench-cost``, ``inspect-nifti``. Every training subcommand reads a flat
``key = value`` config file (sections ``model.*``, ``train.*``,
``augment.*``, ``data.*``) plus ``--set key=value`` overrides, and writes
into a run directory: ``config.snapshot``, checkpoints, ``metrics.log``, and
(for bench-cost) the cost report. Exit codes: 0 success, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import os
import sys

from voxswin import config as cfgmod
from voxswin import costmodel as cm
from voxswin import nifti
from voxswin import train as tr
from voxswin.checkpoint import CheckpointError, load_checkpoint, read_checkpoint
from voxswin.encoder import Model, ModelConfig
from voxswin.nifti import NiftiError
from voxswin.volumes import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    standardize,
    write_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DATA_ERRORS = (NiftiError, CheckpointError, cfgmod.ConfigFileError,
               FileNotFoundError, NotADirectoryError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); remap to usage
        raise UsageError(message)


def build_parser() -> Parser:
    p = Parser(prog="voxswin", description=__doc__,
               formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="override train/augment seeds")
        sp.add_argument("--out-dir", help="run directory for outputs")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")

    g = sub.add_parser("gen-synth", help="write a labeled synthetic NIfTI dataset")
    common(g)
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--per-class", type=int, default=40)
    g.add_argument("--grid", default="15,24,24,24", help="T,H,W,D")
    g.add_argument("--blobs", type=int, default=5)
    g.add_argument("--noise-sigma", type=float, default=0.1)

    t = sub.add_parser("pretrain", help="contrastive pretraining run")
    common(t)
    t.add_argument("--data", help="dataset directory (overrides data.dir)")

    f = sub.add_parser("finetune", help="supervised fine-tuning run")
    common(f)
    f.add_argument("--data", help="dataset directory (overrides data.dir)")
    f.add_argument("--init", help="checkpoint to warm-start the encoder from")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--data", help="dataset directory (overrides data.dir)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--knn", action="store_true", default=True,
                   help="kNN probe on encoder features (default)")

    b = sub.add_parser("bench-cost", help="analytic attention cost report")
    common(b)
    b.add_argument("--mode", choices=["divided", "joint4d", "both"], default="both")
    b.add_argument("--window", type=int, default=None)
    b.add_argument("--precision", type=int, choices=[2, 8], default=2)
    b.add_argument("--probe", action="store_true",
                   help="also run the instrumented forward-pass probe")

    i = sub.add_parser("inspect-nifti", help="dump a NIfTI-1 header and stats")
    common(i)
    i.add_argument("path")
    return p


# -- config plumbing -------------------------------------------------------------------


def load_run_config(args) -> dict[str, str]:
    kv: dict[str, str] = {}
    if getattr(args, "config", None):
        kv.update(cfgmod.read_config_file(args.config))
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        kv[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        kv["train.seed"] = str(args.seed)
        kv["augment.seed"] = str(args.seed)
    if getattr(args, "data", None):
        kv["data.dir"] = args.data
    return kv


def snapshot(out_dir, kv: dict[str, str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.write_config_file(os.path.join(out_dir, "config.snapshot"), kv)


def load_standardized(kv: dict[str, str], cfg: ModelConfig):
    data_dir = kv.get("data.dir")
    if not data_dir:
        raise UsageError("no dataset directory: pass --data or set data.dir")
    samples = load_dataset(data_dir)
    target = (None, cfg.extent, cfg.extent, cfg.extent)
    return [standardize(v, target=target) for v in samples]


def split_from_kv(samples, kv, seed):
    frac = float(kv.get("data.val_fraction", "0.2"))
    return tr.stratified_split(samples, frac, seed)


# -- subcommands ------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    if not args.out_dir:
        raise UsageError("gen-synth needs --out-dir")
    grid = tuple(int(x) for x in args.grid.split(","))
    if len(grid) != 4:
        raise UsageError(f"--grid expects T,H,W,D, got {args.grid!r}")
    seed = args.seed if args.seed is not None else 0
    spec = SyntheticSpec(n_classes=args.classes, samples_per_class=args.per_class,
                         grid=grid, blob_count=args.blobs,
                         noise_sigma=args.noise_sigma, seed=seed)
    samples = generate_synthetic(spec)
    manifest = write_dataset(args.out_dir, samples, seed=seed)
    print(f"wrote {len(samples)} volumes ({args.classes} classes) under {args.out_dir}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    kv = load_run_config(args)
    out_dir = args.out_dir or kv.get("data.out_dir") or "runs/pretrain"
    cfg = cfgmod.model_from_kv(kv)
    sched = cfgmod.schedule_from_kv(kv, tr.TrainSchedule.pretrain_default())
    spec = cfgmod.augment_from_kv(kv)
    snapshot(out_dir, {**cfgmod.model_to_kv(cfg), **cfgmod.schedule_to_kv(sched),
                       **cfgmod.augment_to_kv(spec), **{k: v for k, v in kv.items()
                                                        if k.startswith("data.")}})
    samples = load_standardized(kv, cfg)
    train_s, val_s = split_from_kv(samples, kv, sched.seed)
    model = Model(cfg, seed=sched.seed)
    result = tr.pretrain(model, train_s, val_s, spec, sched, out_dir)
    print(f"pretrain done: best kNN acc {result.best_val_acc:.4f} "
          f"(init {result.init_val_acc:.4f}) over {sched.epochs} epochs")
    print(f"checkpoints: {result.best_path} / {result.last_path}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    kv = load_run_config(args)
    out_dir = args.out_dir or "runs/finetune"
    cfg = cfgmod.model_from_kv(kv)
    sched = cfgmod.schedule_from_kv(kv, tr.TrainSchedule.finetune_small())
    spec = cfgmod.augment_from_kv(kv)
    samples = load_standardized(kv, cfg)
    if cfg.n_classes is None:
        cfg = cfg.with_classes(len({v.label for v in samples}))
    snapshot(out_dir, {**cfgmod.model_to_kv(cfg), **cfgmod.schedule_to_kv(sched),
                       **cfgmod.augment_to_kv(spec)})
    train_s, val_s = split_from_kv(samples, kv, sched.seed)
    model = Model(cfg, seed=sched.seed)
    result = tr.finetune(model, train_s, val_s, spec, sched, out_dir,
                         init_checkpoint=args.init)
    print(f"finetune done: best val acc {result.best_val_acc:.4f} "
          f"macro-F1 {result.best_val_f1:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    kv = load_run_config(args)
    _, cfg = read_checkpoint(args.checkpoint)
    if cfg is None:
        raise CheckpointError(f"no sidecar config next to {args.checkpoint}")
    model = Model(cfg, seed=0)
    load_checkpoint(model, args.checkpoint)
    samples = load_standardized(kv, cfg)
    seed = args.seed if args.seed is not None else int(kv.get("train.seed", "0"))
    train_s, val_s = split_from_kv(samples, kv, seed)
    tf = tr.encode_features(model, train_s, seed=seed)
    vf = tr.encode_features(model, val_s, seed=seed)
    acc = tr.knn_validate(tf, [v.label for v in train_s], vf,
                          [v.label for v in val_s], k=1)
    print(f"knn_acc\t{acc:.6f}\t(train {len(train_s)}, val {len(val_s)})")
    if args.out_dir:
        log = tr.MetricLog(os.path.join(args.out_dir, "metrics.log"))
        log.metric("eval", 0, 0, "knn_acc", acc)
        log.close()
    return EXIT_OK


def cmd_bench_cost(args) -> int:
    kv = load_run_config(args)
    cfg = cfgmod.model_from_kv(kv)
    modes = ["divided", "joint4d"] if args.mode == "both" else [args.mode]
    reports = [cm.attention_cost(cfg, m, precision_bytes=args.precision,
                                 window=args.window) for m in modes]
    print(cm.format_report_table(reports))
    if args.probe:
        for mode in modes:
            try:
                probe = cm.empirical_probe(cfg, mode, precision_bytes=args.precision,
                                           window=args.window)
                print(f"probe[{mode}]: total {probe.total_bytes} bytes, "
                      f"peak call {probe.peak_call_bytes} bytes")
            except MemoryError:
                rep = cm.attention_cost(cfg, mode, precision_bytes=args.precision,
                                        window=args.window)
                print(f"probe[{mode}]: out of memory; analytic estimate "
                      f"{rep.total_activation_bytes} bytes", file=sys.stderr)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        tsv = "".join(cm.report_to_tsv(r) for r in reports)
        with open(os.path.join(args.out_dir, "cost_report.tsv"), "w") as fh:
            fh.write(tsv)
        with open(os.path.join(args.out_dir, "cost_report.txt"), "w") as fh:
            fh.write(cm.format_report_table(reports) + "\n")
        print(f"wrote cost report under {args.out_dir}")
    return EXIT_OK


def cmd_inspect_nifti(args) -> int:
    with open(args.path, "rb") as fh:
        raw = fh.read()
    header, arr = nifti.parse(raw)
    print(f"file\t{args.path}")
    print(f"byteorder\t{'little' if header.byteorder == '<' else 'big'}")
    print(f"dim\t{header.dim}")
    print(f"datatype\t{header.datatype}\tbitpix\t{header.bitpix}")
    print(f"pixdim\t{tuple(round(p, 6) for p in header.pixdim)}")
    print(f"vox_offset\t{header.vox_offset}")
    print(f"scl_slope\t{header.scl_slope}\tscl_inter\t{header.scl_inter}")
    print(f"shape(T,X,Y,Z)\t{arr.shape}")
    print(f"min\t{arr.min():.6g}\tmax\t{arr.max():.6g}\tmean\t{arr.mean():.6g}")
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "bench-cost": cmd_bench_cost,
    "inspect-nifti": cmd_inspect_nifti,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print("run 'voxswin --help' for usage", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
