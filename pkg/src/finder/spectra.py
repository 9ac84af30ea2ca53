"""Dielectric spectra on a fixed photon-energy grid and epsilon-near-zero screening."""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

N_POINTS = 3000
E_MAX = 30.0
ENERGY_GRID = np.linspace(0.0, E_MAX, N_POINTS)
GRID_STEP = E_MAX / (N_POINTS - 1)
WINDOW = (0.5, 12.4)  # eV, near infrared to ultraviolet
MAX_EPS_IM = 2.0
MAX_E_HULL = 25.0  # meV/atom
KINDS = ("eps_re", "eps_im")


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_POINTS,):
            raise ValueError(f"spectrum must have {N_POINTS} values, got shape {v.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        object.__setattr__(self, "values", v)

    def at(self, energy: float) -> float:
        return float(np.interp(energy, ENERGY_GRID, self.values))


def resample(points, kind: str = "eps_re") -> Spectrum:
    """Linear interpolation of (energy, value) pairs onto the grid, flat beyond the ends."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least two (energy, value) points")
    if np.any(np.diff(pts[:, 0]) <= 0):
        raise ValueError("energies must be strictly increasing")
    return Spectrum(np.interp(ENERGY_GRID, pts[:, 0], pts[:, 1]), kind)


def _in_window(e, window):
    return window[0] <= e <= window[1]


def find_crossings(s: Spectrum, window=WINDOW) -> list[float]:
    """All zero crossings of the real part inside the window, in increasing energy."""
    if s.kind != "eps_re":
        raise ValueError("crossover energies are defined on the real part")
    v, e = s.values, ENERGY_GRID
    out = []
    for k in np.flatnonzero(v == 0.0):
        if _in_window(e[k], window):
            out.append(float(e[k]))
    # strict sign changes between neighbours
    for k in np.flatnonzero(v[:-1] * v[1:] < 0):
        x = e[k] + (e[k + 1] - e[k]) * v[k] / (v[k] - v[k + 1])
        if _in_window(x, window):
            out.append(float(x))
    return sorted(out)


def find_crossover(s: Spectrum, window=WINDOW) -> float | None:
    """First energy in the window where the real part crosses or touches zero."""
    xs = find_crossings(s, window)
    return xs[0] if xs else None


def enz_region(s: Spectrum) -> list[tuple[float, float]]:
    """Maximal energy intervals with |eps_re| < 1, endpoints refined linearly."""
    v, e = s.values, ENERGY_GRID
    inside = np.abs(v) < 1.0
    intervals = []
    k = 0
    while k < N_POINTS:
        if not inside[k]:
            k += 1
            continue
        start = k
        while k + 1 < N_POINTS and inside[k + 1]:
            k += 1
        stop = k
        lo = e[0] if start == 0 else _boundary(e[start - 1], e[start], v[start - 1], v[start])
        hi = e[-1] if stop == N_POINTS - 1 else _boundary(e[stop], e[stop + 1], v[stop], v[stop + 1])
        intervals.append((float(lo), float(hi)))
        k += 1
    return intervals


def _boundary(e0, e1, v0, v1):
    # |v| crosses 1 between e0 and e1; pick the level (+1 or -1) it passes through
    level = 1.0 if max(v0, v1) >= 1.0 else -1.0
    if v1 == v0:
        return e0
    return e0 + (e1 - e0) * (level - v0) / (v1 - v0)


@dataclass(frozen=True)
class ENZCandidate:
    composition: str
    omega_co: float
    eps_im_at_co: float
    e_hull_meV: float
    later_crossings: tuple[float, ...] = field(default=())


def screen(candidates: Iterable, window=WINDOW, max_eps_im: float = MAX_EPS_IM,
           max_e_hull: float = MAX_E_HULL) -> list[ENZCandidate]:
    """Low-loss, near-stable candidates with a crossover in the window.

    ``candidates`` yields (composition, eps_re, eps_im, e_hull_meV). A candidate
    is kept iff it has a crossover, eps_im there is below ``max_eps_im`` and
    e_hull is below ``max_e_hull`` (both strict). Output is sorted by eps_im at
    the crossover, ties broken by composition.
    """
    kept = []
    for comp, re, im, e_hull in candidates:
        if re.kind != "eps_re" or im.kind != "eps_im":
            raise ValueError(f"{comp}: expected (eps_re, eps_im) spectra, got ({re.kind}, {im.kind})")
        if e_hull is None or (isinstance(e_hull, float) and np.isnan(e_hull)):
            log.warning("%s: no energy above hull given; skipped", comp)
            continue
        xs = find_crossings(re, window)
        if not xs:
            continue
        w = xs[0]
        eps_im = im.at(w)
        if eps_im < 0:
            log.warning("%s: negative eps_im %.4g at crossover; skipped", comp, eps_im)
            continue
        if eps_im < max_eps_im and e_hull < max_e_hull:
            kept.append(ENZCandidate(str(comp), w, eps_im, float(e_hull), tuple(xs[1:])))
    kept.sort(key=lambda c: (c.eps_im_at_co, c.composition))
    return kept


def cooccurrence(compositions: Iterable[Iterable[str]], min_count: int = 5) -> dict[tuple[str, str], int]:
    """Count unordered element pairs once per composition; keep pairs seen at least min_count times.

    Each composition is anything iterable over element symbols (a Composition,
    a list of symbols, ...).
    """
    counts: Counter = Counter()
    for comp in compositions:
        els = sorted(set(comp.keys() if isinstance(comp, Mapping) else comp))
        counts.update(itertools.combinations(els, 2))
    return {pair: c for pair, c in sorted(counts.items()) if c >= min_count}


def drude(omega_p: float, gamma: float = 0.0) -> tuple[Spectrum, Spectrum]:
    """Free-electron dielectric function 1 - wp^2 / (w^2 + i g w) on the grid.

    The w = 0 point is taken from the next grid point to avoid the pole.
    """
    w = ENERGY_GRID.copy()
    w[0] = w[1]
    eps = 1.0 - omega_p ** 2 / (w ** 2 + 1j * gamma * w)
    return Spectrum(eps.real, "eps_re"), Spectrum(eps.imag, "eps_im")
