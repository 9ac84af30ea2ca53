"""Formula graphs: fully connected integer-formula graphs and periodic crystal graphs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chem import DEFAULT_NODE_CAP, ElementEmbeddingTable, IntegerFormula
from .elements import ATOMIC_NUMBER

N_GAUSSIAN = 20
GAUSSIAN_CENTERS = np.linspace(0.0, 5.0, N_GAUSSIAN)
GAUSSIAN_WIDTH = 0.5
DEFAULT_CUTOFF = 4.0


@dataclass(frozen=True)
class FormulaGraph:
    node_features: np.ndarray
    node_elements: tuple[str, ...]
    edges: np.ndarray  # (E, 2) int64, directed (i, j)
    edge_features: np.ndarray | None = None
    domain: str = "formula"
    warning: str | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.node_elements)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def permuted(self, perm) -> FormulaGraph:
        """Relabel nodes: new node k is old node perm[k]."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return FormulaGraph(self.node_features[perm], tuple(self.node_elements[p] for p in perm),
                            inv[self.edges] if len(self.edges) else self.edges,
                            self.edge_features, self.domain, self.warning)


@dataclass(frozen=True)
class CrystalStructure:
    lattice: np.ndarray  # rows are lattice vectors, Angstrom
    species: tuple[str, ...]
    frac_coords: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lattice, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(lat)) < 1e-10:
            raise ValueError("singular lattice")
        frac = np.asarray(self.frac_coords, dtype=float).reshape(-1, 3) % 1.0
        if len(frac) != len(self.species):
            raise ValueError("species and coordinates differ in length")
        for s in self.species:
            if s not in ATOMIC_NUMBER:
                raise ValueError(f"unknown element symbol {s!r}")
        object.__setattr__(self, "lattice", lat)
        object.__setattr__(self, "frac_coords", frac)
        object.__setattr__(self, "species", tuple(self.species))

    @property
    def cart_coords(self) -> np.ndarray:
        return self.frac_coords @ self.lattice


def read_structure(path) -> CrystalStructure:
    """Read the ``lattice: ... ; ... ; ...`` / ``site: El fx fy fz`` text format."""
    lattice = None
    species, coords = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(":")
        key = key.strip().lower()
        if key == "lattice":
            rows = [r.split() for r in rest.split(";")]
            if len(rows) != 3 or any(len(r) != 3 for r in rows):
                raise ValueError(f"{path}:{lineno}: lattice needs three rows of three numbers")
            lattice = np.array(rows, dtype=float)
        elif key == "site":
            parts = rest.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: site needs a symbol and three coordinates")
            species.append(parts[0])
            coords.append([float(x) for x in parts[1:]])
        else:
            raise ValueError(f"{path}:{lineno}: unrecognised line {line!r}")
    if lattice is None:
        raise ValueError(f"{path}: missing lattice line")
    return CrystalStructure(lattice, tuple(species), np.array(coords).reshape(-1, 3))


def write_structure(s: CrystalStructure, path) -> None:
    rows = " ; ".join(" ".join(repr(float(x)) for x in r) for r in s.lattice)
    lines = [f"lattice: {rows}"]
    lines += [f"site: {el} " + " ".join(repr(float(x)) for x in fc)
              for el, fc in zip(s.species, s.frac_coords)]
    Path(path).write_text("\n".join(lines) + "\n")


def gaussian_expand(d) -> np.ndarray:
    """exp(-(d - r0)^2 / sigma^2) on 20 centres spread evenly over [0, 5] A."""
    d = np.asarray(d, dtype=float)
    return np.exp(-((d[..., None] - GAUSSIAN_CENTERS) ** 2) / GAUSSIAN_WIDTH ** 2)


def _image_range(lattice: np.ndarray, cutoff: float) -> np.ndarray:
    # |n_k| <= cutoff * |b_k| + 1 where b_k are reciprocal vectors (no 2*pi);
    # the +1 absorbs fractional differences in (-1, 1).
    recip = np.linalg.inv(lattice).T
    nmax = np.ceil(cutoff * np.linalg.norm(recip, axis=1)).astype(int) + 1
    ranges = [np.arange(-n, n + 1) for n in nmax]
    return np.array(list(itertools.product(*ranges)), dtype=float)


def neighbor_list(s: CrystalStructure, cutoff: float = DEFAULT_CUTOFF):
    """All (i, j, d) with 0 < d < cutoff, j ranging over periodic images.

    Each image of j inside the cutoff yields its own entry. Returns three
    arrays sorted by (i, j, d).
    """
    images = _image_range(s.lattice, cutoff) @ s.lattice  # (T, 3)
    cart = s.cart_coords
    # r_j + T - r_i for every (i, j, T)
    diff = cart[None, :, None, :] + images[None, None, :, :] - cart[:, None, None, :]
    dist = np.linalg.norm(diff, axis=-1)
    mask = (dist > 1e-8) & (dist < cutoff)
    ii, jj, _ = np.nonzero(mask)
    dd = dist[mask]
    order = np.lexsort((dd, jj, ii))
    return ii[order], jj[order], dd[order]


def build_formula_graph(f: IntegerFormula, table: ElementEmbeddingTable,
                        node_cap: int = DEFAULT_NODE_CAP) -> FormulaGraph:
    n = f.total_atoms
    if n < 1 or n > node_cap:
        raise ValueError(f"formula has {n} atoms; must be within 1..{node_cap}")
    elements = tuple(s for s in sorted(f.counts) for _ in range(f.counts[s]))
    feats = table.matrix(elements)
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    edges = np.stack([ii, jj], axis=1).astype(np.int64)
    return FormulaGraph(feats, elements, edges, None, "formula")


def build_crystal_graph(s: CrystalStructure, table: ElementEmbeddingTable,
                        cutoff: float = DEFAULT_CUTOFF,
                        node_cap: int | None = None) -> FormulaGraph:
    if node_cap is not None and len(s.species) > node_cap:
        raise ValueError(f"structure has {len(s.species)} sites, above node cap {node_cap}")
    ii, jj, dd = neighbor_list(s, cutoff)
    edges = np.stack([ii, jj], axis=1).astype(np.int64)
    warning = None
    if len(edges) == 0:
        warning = f"no neighbours within {cutoff} A; nodes are isolated"
    return FormulaGraph(table.matrix(s.species), s.species, edges,
                        gaussian_expand(dd).reshape(-1, N_GAUSSIAN), "crystal", warning)


@dataclass
class GraphBatch:
    """Several graphs packed into one disjoint graph.

    ``pair_i``/``pair_l`` enumerate every ordered node pair (self included)
    inside each graph; ``edge_pair`` maps each edge to its pair index.
    """

    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_attr: np.ndarray | None
    node_graph: np.ndarray
    pair_i: np.ndarray
    pair_l: np.ndarray
    edge_pair: np.ndarray
    num_graphs: int
    domain: str
    graph_sizes: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.node_graph)

    @classmethod
    def from_graphs(cls, graphs) -> GraphBatch:
        graphs = list(graphs)
        if not graphs:
            raise ValueError("empty batch")
        domains = {g.domain for g in graphs}
        if len(domains) != 1:
            raise ValueError(f"cannot batch mixed domains {sorted(domains)}")
        sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        offs = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        poffs = np.concatenate([[0], np.cumsum(sizes ** 2)[:-1]])
        src, dst, epair, pi, pl = [], [], [], [], []
        for g, n, o, po in zip(graphs, sizes, offs, poffs):
            e = g.edges
            src.append(e[:, 0] + o)
            dst.append(e[:, 1] + o)
            epair.append(po + e[:, 0] * n + e[:, 1])
            r = np.arange(n)
            pi.append(np.repeat(r, n) + o)
            pl.append(np.tile(r, n) + o)
        edge_attr = None
        if graphs[0].edge_features is not None:
            edge_attr = np.concatenate([g.edge_features for g in graphs], axis=0)
        cat = lambda xs: np.concatenate(xs).astype(np.int64)
        return cls(np.concatenate([g.node_features for g in graphs], axis=0),
                   cat(src), cat(dst), edge_attr,
                   np.repeat(np.arange(len(graphs)), sizes), cat(pi), cat(pl), cat(epair),
                   len(graphs), domains.pop(), sizes)
