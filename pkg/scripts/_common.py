import argparse

import torch

from humusnet.experiments import Budget


def budget_args(parser: argparse.ArgumentParser) -> None:
    b = Budget()
    parser.add_argument("--root", default="experiments", help="where data and runs go")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--volumes", type=int, default=b.volumes)
    parser.add_argument("--size", type=int, default=b.size)
    parser.add_argument("--epochs", type=int, default=b.epochs)
    parser.add_argument("--acceleration", type=float, default=b.acceleration)
    parser.add_argument("--threads", type=int, default=1)


def budget_from(args) -> Budget:
    torch.set_num_threads(args.threads)
    return Budget(volumes=args.volumes, size=args.size, epochs=args.epochs, acceleration=args.acceleration)


def report(name, seed, result):
    print(f"  {name:<18} seed {seed}: val SSIM {result['val_ssim']:.4f} (zero-filled {result['zero_filled_ssim']:.4f})",
          flush=True)
