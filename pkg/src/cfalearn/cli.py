"""Command-line entry point.

Subcommands: train-joint, train-fixed, eval, demosaick, export-pattern,
inspect-checkpoint.  Settings come from a line-oriented ``key = value``
config file; command-line flags override config keys.  The fully resolved
config is echoed into the output directory for every run.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dp
from . import evaluate as ev
from . import patterns as pat
from . import train as tr

_CONFIG_KEYS = {
    "batch_size": int, "lr": float, "iters": int, "gamma": float,
    "noise_std": float, "seed": int, "validate_every": int,
    "checkpoint_every": int, "momentum": float, "P": int, "K": int, "F": int,
    "gate_softmax": lambda s: s.lower() in ("1", "true", "yes"),
    "warm_start": lambda s: s.lower() in ("1", "true", "yes"),
    "fine_tune_iters": int, "fine_tune_lr": float,
    "data_dir": str, "val_frac": float,
}


class CliError(RuntimeError):
    pass


def _parse_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _CONFIG_KEYS[key](val)
    return values


def _resolved_config(args) -> dict:
    cfg = dict(_parse_config_file(args.config)) if getattr(args, "config", None) else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _train_config(cfg: dict) -> tr.TrainConfig:
    fine = None
    if "fine_tune_iters" in cfg:
        fine = (cfg["fine_tune_iters"], cfg.get("fine_tune_lr", 1e-4))
    fields = {k: v for k, v in cfg.items()
              if k in ("batch_size", "lr", "iters", "gamma", "noise_std", "seed",
                       "validate_every", "checkpoint_every", "momentum",
                       "P", "K", "F", "gate_softmax", "warm_start")}
    return tr.TrainConfig(fine_tune=fine, **fields)


def _load_dataset(data_dir, val_frac, seed):
    paths = sorted(Path(data_dir).glob("*"))
    paths = [p for p in paths if p.suffix.lower() in (".ppm", ".pnm", ".png")]
    if not paths:
        raise CliError(f"no images found in {data_dir}")
    n_val = max(1, int(len(paths) * val_frac))
    if n_val >= len(paths):
        raise CliError(f"validation fraction {val_frac} leaves no training images")
    split = dp.split_dataset([str(p) for p in paths], n_test=0, n_val=n_val, seed=seed)
    train = [dp.load_image(p) for p in split.train]
    val = [dp.load_image(p) for p in split.val]
    return train, val


def _echo_config(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved.cfg", "w", encoding="ascii") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")


def _cmd_train_joint(args):
    cfg = _resolved_config(args)
    out_dir = Path(args.out)
    _echo_config(cfg, out_dir)
    config = _train_config(cfg)
    train_imgs, val_imgs = _load_dataset(cfg["data_dir"], cfg.get("val_frac", 0.1),
                                         config.seed)
    pattern, params, log = tr.train_joint(config, train_imgs, val_imgs,
                                          checkpoint_path=out_dir / "joint.ckpt")
    hard = pat.HardPattern(config.P, np.argmax(pattern.w.data, axis=-1))
    pat.write_pattern(hard, out_dir / "learned.cfa")
    ev.export_pattern_image(hard, out_dir / "learned.ppm", upscale=16)
    log.write(out_dir / "train.log")
    print(f"wrote {out_dir / 'learned.cfa'} and {out_dir / 'joint.ckpt'}")
    return 0


def _cmd_train_fixed(args):
    cfg = _resolved_config(args)
    out_dir = Path(args.out)
    _echo_config(cfg, out_dir)
    config = _train_config(cfg)
    pattern = pat.read_pattern(args.pattern)
    train_imgs, val_imgs = _load_dataset(cfg["data_dir"], cfg.get("val_frac", 0.1),
                                         config.seed)
    _, log = tr.train_fixed(pattern, config, train_imgs, val_imgs,
                            checkpoint_path=out_dir / "fixed.ckpt")
    log.write(out_dir / "train.log")
    print(f"wrote {out_dir / 'fixed.ckpt'}")
    return 0


def _cmd_eval(args):
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    state = tr.load_checkpoint(args.checkpoint)
    params = tr.params_from_checkpoint(state)
    pattern = pat.read_pattern(args.pattern)
    images = [dp.load_image(p) for p in sorted(Path(args.data).glob("*"))
              if Path(p).suffix.lower() in (".ppm", ".pnm", ".png")]
    if not images:
        raise CliError(f"no images found in {args.data}")
    sigmas = [float(s) for s in args.sigmas.split(",")]
    report = ev.evaluate(pattern, params, images, sigmas, seed=args.seed,
                         patch_size=args.patch_size, pattern_name=args.name)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.table() + "\n", encoding="ascii")
    report.write_csv(out_dir / "report.csv")
    print(report.table())
    return 0


def _cmd_demosaick(args):
    pattern = pat.read_pattern(args.pattern)
    img = dp.load_image(args.input)
    p = pattern.period
    h = (img.shape[0] // p) * p
    w = (img.shape[1] // p) * p
    x = dp.build_channels(img[:h, :w])
    sel = np.eye(4)[pattern.tiled(h, w)]
    s = (sel * x).sum(axis=-1)
    recon = pat.bilinear_demosaick(s, pattern)
    dp.write_ppm(args.out, np.clip(recon, 0, 1))
    print(f"wrote {args.out}")
    return 0


def _cmd_export_pattern(args):
    if args.type == "bayer":
        pattern = pat.bayer_pattern(args.period)
    elif args.type == "cfz":
        pattern = pat.cfz_pattern(args.period, args.rate)
    else:
        pattern = pat.read_pattern(args.type)
    pat.write_pattern(pattern, args.out)
    if args.image:
        ev.export_pattern_image(pattern, args.image, upscale=args.upscale)
    print(f"wrote {args.out}")
    return 0


def _cmd_inspect_checkpoint(args):
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    state = tr.load_checkpoint(args.checkpoint)
    print(f"iteration: {state['iteration']}")
    print(f"config: {state['config']}")
    for key in sorted(state):
        if isinstance(state[key], np.ndarray):
            print(f"{key}: shape {state[key].shape}")
    return 0


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--validate-every", dest="validate_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("-P", "--period", dest="P", type=int)
    p.add_argument("-K", "--proposals", dest="K", type=int)
    p.add_argument("-F", "--conv-width", dest="F", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--val-frac", dest="val_frac", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfalearn",
        description="Learn color-filter-array patterns jointly with a demosaicking network.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (best effort)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-joint", help="jointly train pattern and network")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_joint)

    p = sub.add_parser("train-fixed", help="train a network for a fixed pattern")
    _add_config_flags(p)
    p.add_argument("--pattern", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_fixed)

    p = sub.add_parser("eval", help="PSNR report for a trained network")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pattern", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigmas", default="0.0,0.01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", dest="patch_size", type=int, default=64)
    p.add_argument("--name", default="pattern")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("demosaick", help="classical bilinear reconstruction")
    p.add_argument("--pattern", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_demosaick)

    p = sub.add_parser("export-pattern", help="write a baseline or stored pattern")
    p.add_argument("--type", required=True, help="'bayer', 'cfz', or a pattern file path")
    p.add_argument("--period", type=int, default=8)
    p.add_argument("--rate", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--image", help="also render a raster preview here")
    p.add_argument("--upscale", type=int, default=16)
    p.set_defaults(func=_cmd_export_pattern)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_inspect_checkpoint)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (CliError, tr.CheckpointError, pat.PatternError, dp.DataError,
            ev.EvalError, tr.TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
