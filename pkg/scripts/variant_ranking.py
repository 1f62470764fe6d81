"""Mean held-out k-NN accuracy of all six variants over several seeds.

Uses the superclass dataset, where sibling classes overlap, so the variants
do not all saturate at 1.0.

    python3 scripts/variant_ranking.py --seeds 0,1,2,3,4
"""

import argparse

import numpy as np

from covnet.experiments import HIERARCHICAL, variant_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    table = variant_table(seeds, HIERARCHICAL)
    print(f"{'variant':<12} {'mean':>6} {'std':>6}  per seed")
    for v, runs in sorted(table.items(), key=lambda kv: -np.mean([r.knn for r in kv[1]])):
        acc = np.array([r.knn for r in runs])
        print(f"{v:<12} {acc.mean():6.3f} {acc.std():6.3f}  {' '.join(f'{a:.3f}' for a in acc)}")


if __name__ == "__main__":
    main()
