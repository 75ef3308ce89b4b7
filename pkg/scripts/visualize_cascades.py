"""Dump per-cascade magnitudes for one slice and print how each stage moves the error."""

import argparse
import json
from pathlib import Path

from humusnet.metrics import ssim
from humusnet.phantom import read_volume
from humusnet.train import load_model, reconstruct_slice, write_images


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("checkpoint")
    parser.add_argument("volume")
    parser.add_argument("slice", type=int)
    parser.add_argument("--out", default="cascades")
    args = parser.parse_args()

    net, _, _ = load_model(args.checkpoint)
    vol = read_volume(args.volume)
    images = reconstruct_slice(net, vol, args.slice)
    write_images(images, args.out)
    dr = vol.data_range
    target = images["target"].double()
    scores = {k: float(ssim(v.double(), target, dr)) for k, v in images.items() if k != "target"}
    for name, s in scores.items():
        print(f"{name:<14} SSIM {s:.4f}")
    (Path(args.out) / "ssim.json").write_text(json.dumps(scores, indent=2))


if __name__ == "__main__":
    main()
