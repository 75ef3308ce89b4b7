"""Validation SSIM as a function of the number of cascades T."""

import argparse

from _common import budget_args, budget_from, report
from humusnet.experiments import Arm, budget_config, compare, table


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    budget_args(parser)
    parser.add_argument("--cascades", type=int, nargs="+", default=[1, 2, 4])
    args = parser.parse_args()
    budget = budget_from(args)
    arms = []
    for t in args.cascades:
        cfgs = []
        for seed in args.seeds:
            cfg = budget_config("humus", budget, args.root, seed)
            cfg.model.cascades = t
            cfg.out += f"_T{t}"
            cfgs.append(cfg)
        arms.append(Arm(f"T={t}", cfgs))
    compare(arms, report)
    print(table(arms))


if __name__ == "__main__":
    main()
