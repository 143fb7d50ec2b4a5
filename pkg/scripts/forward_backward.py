"""Forward-backward infidelity over T, g and chi on the modulated 1D trap.

    python scripts/forward_backward.py --R 26 --T 2 5 10 --g 0 5 --chi 10
    python scripts/forward_backward.py --R 30 --T 1 10 50 100 --g 0 1 5 --chi 10 20   # hours

V = 0.01 x^2 + 10 sin^2(q x) on [-200, 200), h_t = 0.01, Gaussian start.
Each (g, chi) pair runs forward once and back to 0 from every T.
"""

import argparse
import csv
import sys
import time
import warnings

from qttgp.operators import PotentialTerm, PotentialWarning
from qttgp.quantics import QuanticsGrid
from qttgp.solver import EvolutionConfig, forward_backward_scan, gaussian_state


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=26)
    ap.add_argument("--W", type=float, default=200.0)
    ap.add_argument("--q", type=float, default=1e4)
    ap.add_argument("--T", type=float, nargs="+", default=[2.0, 5.0, 10.0])
    ap.add_argument("--g", type=float, nargs="+", default=[0.0, 5.0])
    ap.add_argument("--chi", type=int, nargs="+", default=[10])
    ap.add_argument("--h-t", type=float, default=0.01)
    ap.add_argument("-o", "--output")
    a = ap.parse_args(argv)
    grid = QuanticsGrid(1, a.R, a.W)
    pot = (PotentialTerm("harmonic_x", 0.01 * a.W**2), PotentialTerm("sine_mod", 10.0, (a.q,)))
    psi0 = gaussian_state(grid)
    out = open(a.output, "w", newline="") if a.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["T", "g", "chi", "epsilon", "wall_s"])
    warnings.simplefilter("ignore", PotentialWarning)
    for chi in a.chi:
        for g in a.g:
            cfg = EvolutionConfig(grid=grid, h_t=a.h_t, T=max(a.T), g=g, chi_max=chi, potential=pot, record_every=100)
            t0 = time.perf_counter()
            eps = forward_backward_scan(psi0, cfg, a.T)
            wall = time.perf_counter() - t0
            for T in sorted(eps):
                w.writerow([T, g, chi, repr(eps[T]), round(wall, 1)])
            out.flush()


if __name__ == "__main__":
    main()
