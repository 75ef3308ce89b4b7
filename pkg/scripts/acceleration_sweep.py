"""Train at one acceleration, evaluate at several (fixed masks per volume)."""

import argparse

from _common import budget_args, budget_from
from humusnet.experiments import budget_config, ensure_data, run_trial
from humusnet.phantom import generate_volume
from humusnet.train import evaluate, load_model, split_volumes

def main():
    parser = argparse.ArgumentParser(description=__doc__)
    budget_args(parser)
    parser.add_argument("--eval-accelerations", type=float, nargs="+", default=[2.0, 4.0, 8.0])
    args = parser.parse_args()
    budget = budget_from(args)
    seed = args.seeds[0]
    cfg = budget_config("humus", budget, args.root, seed)
    ensure_data(cfg)
    run_trial(cfg)
    net, cfg, _ = load_model(f"{cfg.out}/best.ckpt")
    d = cfg.data
    _, val_ids = split_volumes(d.volumes, cfg.optim.val_fraction, cfg.optim.split)
    print(f"trained at x{d.acceleration:g}")
    for acc in args.eval_accelerations:
        vols = [
            generate_volume(i, d.seed * 100_003 + i, d.height, d.width, d.slices, d.coils,
                            acc, d.center_fraction, d.noise_sigma)
            for i in val_ids
        ]
        rep = evaluate(net, vols)
        print(f"  x{acc:g}: SSIM {rep['ssim']:.4f} (zero-filled {rep['zero_filled']['ssim']:.4f}), "
              f"PSNR {rep['psnr']:.2f} dB, NMSE {rep['nmse']:.4f}")

if __name__ == "__main__":
    main()
