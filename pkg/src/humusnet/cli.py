"""Command-line entry point: ``humusnet {gen-data,train,eval,reconstruct,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .autograd import DimensionError
from .checkpoint import CheckpointError
from .config import ABLATION_PRESETS, ConfigError, RunConfig, load_config, preset, save_config, validate
from .mri import InfeasibleMaskError, UnsupportedSizeError
from .phantom import DatasetError, read_volume
from .train import (
    NumericError,
    Trainer,
    evaluate,
    generate_dataset,
    load_model,
    load_split,
    reconstruct_slice,
    write_images,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.data.seed = args.seed
        cfg.optim.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "data", None):
        cfg.data.dir = args.data
    validate(cfg)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    manifest = generate_dataset(cfg)
    print(f"wrote {len(manifest['volumes'])} volumes to {cfg.data.dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    trainer = Trainer(cfg)
    save_config(cfg, Path(cfg.out) / "config.toml")
    if args.resume:
        trainer.resume(args.resume)
    rows = trainer.fit(args.epochs)
    if rows:
        last = rows[-1]
        print(f"epoch {last['epoch']}: train loss {last['train_loss']:.4f}, val ssim {last['val_ssim']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, cfg, _ = load_model(args.checkpoint)
    if args.data:
        cfg.data.dir = args.data
    _, val = load_split(cfg)
    report = evaluate(net, val, cfg.optim.batch_size)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    net, _, _ = load_model(args.checkpoint)
    vol = read_volume(args.volume)
    images = reconstruct_slice(net, vol, args.slice)
    if not args.dump_cascades:
        images = {k: v for k, v in images.items() if not k.startswith("cascade_")}
    write_images(images, args.out)
    print(f"wrote {len(images)} images to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    names = [args.preset] if args.preset else list(ABLATION_PRESETS)
    out = Path(args.out or "configs")
    for name in names:
        cfg = preset(name)
        path = out / f"{name}.toml"
        save_config(cfg, path)
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="humusnet")
    parser.add_argument("--threads", type=int, default=1, help="torch intra-op threads (1 = deterministic)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a phantom dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (unused here)")
    p.add_argument("--data", help="dataset directory override")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--data")
    p.add_argument("--epochs", type=int, help="stop after this epoch (default: config)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="write PGM images for one slice")
    p.add_argument("checkpoint")
    p.add_argument("volume")
    p.add_argument("slice", type=int)
    p.add_argument("--out", default="recon")
    p.add_argument("--dump-cascades", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="write ablation preset configs")
    p.add_argument("preset", nargs="?", choices=ABLATION_PRESETS)
    p.add_argument("--out", help="directory for the TOML files")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(max(1, args.threads))
    if args.threads == 1:
        torch.use_deterministic_algorithms(True)
    try:
        return args.func(args)
    except (ConfigError, DimensionError, InfeasibleMaskError, UnsupportedSizeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, FileNotFoundError, IndexError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
