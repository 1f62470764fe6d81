"""Class-correlation structure learned on the two-level (superclass) blob dataset.

Trains one variant per seed and prints its centroid correlation matrix and
the sibling margin: the smallest same-superclass correlation minus the
largest cross-superclass one.  A positive margin means sibling classes are
more alike in the embedding than unrelated ones.

    python3 scripts/semantic_correlation.py --variant covnet-v2 --seeds 0,1,2,3,4
"""

import argparse

import numpy as np

from covnet.experiments import HIERARCHICAL, run, sibling_margin


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variant", default="covnet-v2")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()

    np.set_printoptions(precision=3, suppress=True)
    wins = 0
    seeds = [int(s) for s in args.seeds.split(",")]
    for seed in seeds:
        r = run(args.variant, seed, HIERARCHICAL)
        m = sibling_margin(r.correlation, HIERARCHICAL.superclasses)
        wins += m > 0
        print(f"seed {seed}: knn@10 {r.knn:.3f}, sibling margin {m:+.3f}")
        print(r.correlation)
    print(f"{wins}/{len(seeds)} seeds with a positive sibling margin")


if __name__ == "__main__":
    main()
