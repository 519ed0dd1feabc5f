#!/usr/bin/env python3
"""Write a synthetic embedding fixture in the UQEB binary format.

Examples:
    python3 scripts/make_synthetic_data.py --kind gauss --n 2000 --dim 16 \
        --seed 7 --out /tmp/gauss.uqeb
    python3 scripts/make_synthetic_data.py --kind noisy-region --out /tmp/nr.uqeb
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from uqheads.data import write_embedding_file
from uqheads.synthetic import noisy_region_dataset, two_gaussian_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kind", choices=["gauss", "noisy-region"], default="gauss")
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--sep", type=float, default=8.0,
                        help="class separation for --kind gauss")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    if args.kind == "gauss":
        ds = two_gaussian_dataset(args.n, args.dim, args.sep, args.seed)
    else:
        ds = noisy_region_dataset(args.n, args.dim, args.seed)
    write_embedding_file(args.out, ds)
    pos = float(ds.labels.mean())
    print(f"wrote {args.out}: n={ds.n} dim={ds.dim} positive fraction {pos:.3f}")


if __name__ == "__main__":
    main()
