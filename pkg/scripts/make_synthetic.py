"""Write a synthetic dataset: random compositions, target = fraction-weighted Pauling electronegativity."""

import argparse

from finder.data import synthetic_electronegativity, write_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("-n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-species", type=int, default=4)
    args = ap.parse_args()
    names, y = synthetic_electronegativity(args.n, seed=args.seed, max_species=args.max_species)
    write_dataset(args.output, names, y)
    print(f"wrote {len(names)} rows to {args.output}")


if __name__ == "__main__":
    main()
