"""Screen a handful of free-electron (Drude) spectra and print the report.

Shows the screening rules on spectra whose crossover is known in closed
form: the real part 1 - wp^2 / (w^2 + g^2) crosses zero at sqrt(wp^2 - g^2).
"""

import math

from finder.chem import parse_formula
from finder.spectra import cooccurrence, drude, enz_region, screen

CANDIDATES = [  # composition, plasma energy (eV), damping (eV), energy above hull (meV/atom)
    ("VO2", 3.0, 0.3, 5.0),
    ("V2O5", 2.5, 0.5, 12.0),
    ("TiN", 7.0, 6.0, 0.0),
    ("ZrN", 7.5, 0.8, 30.0),
    ("NbVO4", 4.0, 0.2, 20.0),
    ("Na", 14.0, 0.1, 0.0),
]


def main():
    batch = []
    for comp, wp, g, hull in CANDIDATES:
        re, im = drude(wp, g)
        batch.append((comp, re, im, hull))
        region = enz_region(re)
        print(f"{comp:6s} expected w_co {math.sqrt(wp * wp - g * g):6.3f} eV, ENZ from {region[0][0]:.3f} eV")
    print("\ncomposition  w_co(eV)  eps_im  E_hull")
    kept = screen(batch)
    for c in kept:
        print(f"{c.composition:11s} {c.omega_co:8.3f} {c.eps_im_at_co:7.3f} {c.e_hull_meV:6.1f}")
    print("\nco-occurring pairs:", cooccurrence([parse_formula(c.composition) for c in kept], min_count=2))


if __name__ == "__main__":
    main()
