"""Dataset files, graph construction for whole datasets, and synthetic tasks."""

from __future__ import annotations

import csv
import logging
from fractions import Fraction
from pathlib import Path

import numpy as np

from .chem import (DEFAULT_NODE_CAP, Composition, ElementEmbeddingTable, FormulaError,
                   format_composition, parse_formula, to_integer_formula)
from .elements import ELECTRONEGATIVITY
from .graph import DEFAULT_CUTOFF, build_crystal_graph, build_formula_graph, read_structure
from .train import Dataset

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


def read_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def _target(row: dict, lineno: int, path) -> np.ndarray | float:
    if row.get("target_vector"):
        return np.array([float(x) for x in row["target_vector"].split(";")])
    if row.get("target") not in (None, ""):
        return float(row["target"])
    raise DataError(f"{path}:{lineno}: row has neither target nor target_vector")


def _e_hull(row: dict) -> float | None:
    v = row.get("e_hull_meV")
    return None if v in (None, "") else float(v)


def build_graph(row: dict, table: ElementEmbeddingTable, domain: str, base_dir: Path,
                cutoff: float = DEFAULT_CUTOFF, node_cap: int = DEFAULT_NODE_CAP):
    """Graph for one dataset row, from its composition or its structure file."""
    if domain == "formula":
        comp = parse_formula(row["composition"])
        return build_formula_graph(to_integer_formula(comp, node_cap=node_cap), table, node_cap)
    sfile = row.get("structure_file")
    if not sfile:
        raise DataError(f"{row.get('composition')}: crystal domain needs a structure_file")
    g = build_crystal_graph(read_structure(base_dir / sfile), table, cutoff, node_cap)
    if g.warning:
        log.warning("%s: %s", row.get("composition"), g.warning)
    return g


def load_dataset(path, table: ElementEmbeddingTable, domain: str = "formula",
                 cutoff: float = DEFAULT_CUTOFF, node_cap: int = DEFAULT_NODE_CAP,
                 skip_bad: bool = False) -> Dataset:
    """Read a dataset file. Rows that fail to parse raise DataError unless ``skip_bad``."""
    path = Path(path)
    graphs, targets, names, hulls = [], [], [], []
    for lineno, row in enumerate(read_rows(path), 2):
        try:
            y = _target(row, lineno, path)
            g = build_graph(row, table, domain, path.parent, cutoff, node_cap)
        except (DataError, FormulaError, KeyError, ValueError, OSError) as exc:
            if not skip_bad:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            log.warning("%s:%d skipped: %s", path, lineno, exc)
            continue
        graphs.append(g)
        targets.append(y)
        names.append(row["composition"])
        hulls.append(_e_hull(row))
    if not graphs:
        raise DataError(f"{path}: no usable rows")
    shapes = {np.shape(t) for t in targets}
    if len(shapes) != 1:
        raise DataError(f"{path}: mixed target shapes {sorted(shapes)}")
    return Dataset(graphs, np.array(targets), names, hulls)


def write_dataset(path, compositions, targets, e_hull=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        vec = np.ndim(targets[0]) > 0 if len(targets) else False
        cols = ["composition", "target_vector" if vec else "target"]
        if e_hull is not None:
            cols.append("e_hull_meV")
        w.writerow(cols)
        for k, (c, y) in enumerate(zip(compositions, targets)):
            cell = ";".join(repr(float(x)) for x in y) if vec else repr(float(y))
            row = [c, cell]
            if e_hull is not None:
                row.append("" if e_hull[k] is None else repr(float(e_hull[k])))
            w.writerow(row)


# synthetic task: composition-weighted mean electronegativity

SYNTHETIC_ELEMENTS = tuple(s for s in ELECTRONEGATIVITY if s in
                           ("H Li Be B C N O F Na Mg Al Si P S Cl K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
                            "Ga Ge As Se Br Rb Sr Y Zr Nb Mo Ru Rh Pd Ag Cd In Sn Sb Te I Cs Ba La "
                            "Hf Ta W Pt Au Pb Bi").split())


def mean_electronegativity(comp: Composition) -> float:
    total = sum(comp.values())
    return float(sum(Fraction(a) * Fraction(ELECTRONEGATIVITY[s]) for s, a in comp.items()) / total)


def random_compositions(n: int, seed: int = 0, elements=SYNTHETIC_ELEMENTS, max_species: int = 4,
                        max_count: int = 4) -> list[Composition]:
    """Distinct random integer compositions with 1..max_species elements."""
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < n:
        k = int(rng.integers(1, max_species + 1))
        els = rng.choice(len(elements), size=k, replace=False)
        counts = rng.integers(1, max_count + 1, size=k)
        comp = Composition({elements[e]: int(c) for e, c in zip(els, counts)})
        key = str(to_integer_formula(comp))
        if key in seen:
            continue
        seen.add(key)
        out.append(comp)
    return out


def synthetic_electronegativity(n: int, seed: int = 0, **kw) -> tuple[list[str], np.ndarray]:
    comps = random_compositions(n, seed, **kw)
    return [format_composition(c) for c in comps], np.array([mean_electronegativity(c) for c in comps])
