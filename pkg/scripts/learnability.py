"""Train a reduced-width model on the synthetic electronegativity task and report test metrics.

Defaults reproduce the desk-scale learnability check (2000 compositions,
70/15/15 split, at most 200 epochs).
"""

import argparse
import json
import time

from finder.chem import ElementEmbeddingTable, parse_formula, to_integer_formula
from finder.data import synthetic_electronegativity
from finder.graph import build_formula_graph
from finder.model import FinderConfig, FinderModel
from finder.train import Dataset, TrainConfig, evaluate, split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ablation", action="append", default=[])
    args = ap.parse_args()

    table = ElementEmbeddingTable.one_hot()
    names, y = synthetic_electronegativity(args.n, seed=2024)
    graphs = [build_formula_graph(to_integer_formula(parse_formula(s)), table) for s in names]
    data = Dataset(graphs, y, names)
    tr, va, te = split(len(data), seed=args.seed)
    cfg = FinderConfig(input_dim=table.dim, hidden_dim=args.hidden, key_dim=args.hidden, edge_hidden=(32,),
                       message_hidden=(32,), pool_hidden=32, conv_filters=4, dense_widths=(64, 64),
                       ablations=tuple(args.ablation), seed=args.seed)
    model = FinderModel(cfg)
    t0 = time.time()
    res = train(model, data.subset(tr), data.subset(va), TrainConfig(max_epochs=args.epochs, seed=args.seed),
                progress=lambda r: print(f"epoch {r['epoch']:4d}  loss {r['train_loss']:+.4f}  "
                                         f"val MAE {r['val_MAE']:.4f}", flush=True))
    m = evaluate(model, data.subset(te), res.normalizer)
    print(json.dumps({**m.summary(), "params": model.num_parameters(), "epochs": len(res.history),
                      "seconds": round(time.time() - t0, 1)}, indent=2))


if __name__ == "__main__":
    main()
