"""Reduced-scale formation-energy check on real data.

Needs a dataset file (composition,target in eV/atom) such as an export of
Materials Project formation energies. Trains the default-width composition
model on at most 5000 training samples and compares the test MAE with the
0.20 eV/atom bound and with the power law anchored at 0.0858 eV/atom for
68699 samples with slope -0.21.

    python scripts/real_data_check.py ef.csv --embedding mat2vec.txt
"""

import argparse
import json

from finder.chem import ElementEmbeddingTable
from finder.data import load_dataset
from finder.model import FinderConfig, FinderModel
from finder.train import TrainConfig, evaluate, split, train

BOUND = 0.20
ANCHOR_N, ANCHOR_MAE, SLOPE = 68699, 0.0858, -0.21


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("dataset")
    ap.add_argument("--embedding")
    ap.add_argument("--train-size", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = ElementEmbeddingTable.load(args.embedding) if args.embedding else ElementEmbeddingTable.one_hot()
    data = load_dataset(args.dataset, table, skip_bad=True)
    tr, va, te = split(len(data), seed=args.seed)
    tr = tr[:args.train_size]
    model = FinderModel(FinderConfig(input_dim=table.dim, seed=args.seed))
    res = train(model, data.subset(tr), data.subset(va), TrainConfig(max_epochs=args.epochs, seed=args.seed),
                progress=lambda r: print(f"epoch {r['epoch']}  val MAE {r['val_MAE']:.4f}", flush=True))
    m = evaluate(model, data.subset(te), res.normalizer)
    expected = ANCHOR_MAE * (len(tr) / ANCHOR_N) ** SLOPE
    print(json.dumps({**m.summary(), "n_train": len(tr), "power_law_expectation": expected,
                      "within_bound": m.mae <= BOUND}, indent=2))


if __name__ == "__main__":
    main()
