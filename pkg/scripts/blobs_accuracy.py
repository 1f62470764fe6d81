"""Held-out k-NN accuracy of every variant on separable 4-class Gaussian blobs.

    python3 scripts/blobs_accuracy.py --seed 42 --k 10
"""

import argparse
import json

from covnet.experiments import BLOBS, run
from covnet.model import VARIANTS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()

    rows = []
    print(f"{'variant':<12} {'knn@' + str(args.k):>8} {'epochs':>7} {'seconds':>8}")
    for v in args.variants.split(","):
        r = run(v, args.seed, BLOBS, k=args.k)
        rows.append({"variant": v, "knn": r.knn, "epochs": len(r.history.records), "seconds": r.seconds})
        print(f"{v:<12} {r.knn:8.3f} {len(r.history.records):7d} {r.seconds:8.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"seed": args.seed, "k": args.k, "results": rows}, fh, indent=1)


if __name__ == "__main__":
    main()
