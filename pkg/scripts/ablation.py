"""Denoiser ablation: Un-SS, Un-MS, Un-MS-Patch2 and the HUMUS block under one budget."""

import argparse

from _common import budget_args, budget_from, report
from humusnet.experiments import Arm, budget_config, compare, table

ARMS = ("un-ss", "un-ms", "un-ms-patch2", "ablation-humus")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    budget_args(parser)
    parser.add_argument("--arms", nargs="+", default=list(ARMS))
    args = parser.parse_args()
    budget = budget_from(args)
    arms = [Arm(name, [budget_config(name, budget, args.root, s) for s in args.seeds]) for name in args.arms]
    compare(arms, report)
    print(table(arms))


if __name__ == "__main__":
    main()
