"""Adjacent-slice reconstruction on vs off (a = 1 vs a = 0), matched budgets."""

import argparse

from _common import budget_args, budget_from, report
from humusnet.experiments import Arm, budget_config, compare, table


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    budget_args(parser)
    args = parser.parse_args()
    budget = budget_from(args)
    arms = []
    for a in (0, 1):
        cfgs = []
        for seed in args.seeds:
            cfg = budget_config("humus", budget, args.root, seed)
            cfg.model.asr = a
            cfg.out += f"_asr{a}"
            cfgs.append(cfg)
        arms.append(Arm(f"a={a}", cfgs))
    compare(arms, report)
    print(table(arms))
    print(f"mean difference (a=1) - (a=0): {arms[1].mean - arms[0].mean:+.4f}")


if __name__ == "__main__":
    main()
