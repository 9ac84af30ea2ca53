import numpy as np

from finder import tensor as T
from finder.chem import ElementEmbeddingTable, IntegerFormula
from finder.graph import CrystalStructure, build_crystal_graph, build_formula_graph
from finder.model import FinderConfig, FinderModel

SYMBOLS = ("H", "Li", "O", "Fe", "Cu", "Ag", "Sr", "Ti", "Ba", "Na", "Cl")


def random_table(dim=6, seed=0):
    rng = np.random.default_rng(seed)
    return ElementEmbeddingTable({s: rng.normal(size=dim) for s in SYMBOLS})


def tiny_config(**kw):
    base = dict(input_dim=6, hidden_dim=5, key_dim=5, edge_hidden=(8, 6), message_hidden=(8, 6),
                pool_hidden=6, conv_filters=3, dense_widths=(8, 8, 4), seed=1)
    base.update(kw)
    return FinderConfig(**base)


def tiny_model(**kw):
    with T.precision(np.float64):
        return FinderModel(tiny_config(**kw))


def random_formula_graph(rng, table, max_atoms=4):
    n = int(rng.integers(1, max_atoms + 1))
    els = rng.choice(SYMBOLS, size=n)
    counts = {}
    for e in els:
        counts[str(e)] = counts.get(str(e), 0) + 1
    return build_formula_graph(IntegerFormula(counts), table)


def random_crystal_graph(rng, table, max_sites=4):
    n = int(rng.integers(1, max_sites + 1))
    lat = np.diag(rng.uniform(2.6, 4.0, 3)) + rng.uniform(-0.3, 0.3, (3, 3)) * (1 - np.eye(3))
    s = CrystalStructure(lat, tuple(rng.choice(SYMBOLS, size=n)), rng.uniform(0, 1, (n, 3)))
    return build_crystal_graph(s, table, cutoff=3.2)
