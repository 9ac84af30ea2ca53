"""MAE against training-set size on log-log axes, with a fitted power-law slope.

Uses the synthetic electronegativity task unless --dataset is given. The
test set is fixed across sizes; each size trains from scratch.
"""

import argparse
import csv

import numpy as np

from finder.chem import ElementEmbeddingTable, parse_formula, to_integer_formula
from finder.data import load_dataset, synthetic_electronegativity
from finder.graph import build_formula_graph
from finder.model import FinderConfig, FinderModel
from finder.stats import fit_power_law
from finder.train import Dataset, TrainConfig, evaluate, split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset")
    ap.add_argument("--sizes", default="50,100,200,400,800,1400")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", default="sample_efficiency.csv")
    args = ap.parse_args()

    table = ElementEmbeddingTable.one_hot()
    if args.dataset:
        data = load_dataset(args.dataset, table, skip_bad=True)
    else:
        names, y = synthetic_electronegativity(2000, seed=2024)
        data = Dataset([build_formula_graph(to_integer_formula(parse_formula(s)), table) for s in names], y, names)
    tr, va, te = split(len(data), seed=args.seed)
    rows = []
    for n in [int(s) for s in args.sizes.split(",")]:
        cfg = FinderConfig(input_dim=table.dim, hidden_dim=args.hidden, key_dim=args.hidden, edge_hidden=(32,),
                           message_hidden=(32,), pool_hidden=32, conv_filters=4, dense_widths=(64, 64),
                           seed=args.seed)
        model = FinderModel(cfg)
        res = train(model, data.subset(tr[:n]), data.subset(va), TrainConfig(max_epochs=args.epochs,
                                                                             seed=args.seed))
        m = evaluate(model, data.subset(te), res.normalizer)
        rows.append((n, m.mae))
        print(f"n={n:6d}  test MAE {m.mae:.4f}  ({len(res.history)} epochs)", flush=True)
    slope, intercept = fit_power_law(*zip(*rows))
    print(f"log10 MAE = {slope:.3f} log10 n + {intercept:.3f}")
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["train_size", "MAE", "fit_MAE"])
        for n, mae in rows:
            w.writerow([n, repr(mae), repr(float(10 ** (intercept + slope * np.log10(n))))])


if __name__ == "__main__":
    main()
