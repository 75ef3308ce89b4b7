"""HUMUS block vs a plain convolutional U-Net denoiser inside the same cascades."""

import argparse

from _common import budget_args, budget_from, report
from humusnet.experiments import Arm, budget_config, compare, table
from humusnet.unrolled import HumusNet


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    budget_args(parser)
    args = parser.parse_args()
    budget = budget_from(args)
    arms = [Arm(name, [budget_config(name, budget, args.root, s) for s in args.seeds])
            for name in ("ablation-humus", "unet-denoiser")]
    for arm in arms:
        n = sum(p.numel() for p in HumusNet(arm.cfgs[0].model).parameters())
        print(f"{arm.name}: {n:,} parameters")
    compare(arms, report)
    print(table(arms))


if __name__ == "__main__":
    main()
