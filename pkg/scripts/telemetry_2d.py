"""Bond telemetry of 2D runs in four traps (isotropic, anharmonic, fourfold, eightfold).

    python scripts/telemetry_2d.py --R 10 --T 3            # desk scale
    python scripts/telemetry_2d.py --R 20 --T 15 --chi 50  # production scale, many hours

Per record: max bond of the spatial stages and of the non-linear stage.
The non-linear stage uses tol_nl = 1e-8; spatial stages are capped at chi.
"""

import argparse
import csv
import math
import sys
import warnings

from qttgp.operators import PotentialTerm, PotentialWarning
from qttgp.quantics import QuanticsGrid
from qttgp.solver import EvolutionConfig, evolve, gaussian_state


def traps(W: float) -> dict[str, tuple[PotentialTerm, ...]]:
    s = 1 / math.sqrt(2)
    iso = (PotentialTerm("harmonic_x", 0.01 * W**2), PotentialTerm("harmonic_y", 0.01 * W**2))
    aniso = (PotentialTerm("harmonic_x", 0.01 * W**2), PotentialTerm("harmonic_y", 0.015 * W**2))
    return {
        "isotropic": iso,
        "anharmonic": aniso + (PotentialTerm("cross_xy", 0.012 * W**2),),
        "fourfold": aniso + tuple(PotentialTerm("sine_mod", 10.0, q) for q in [(1, 0), (0, 1)]),
        "eightfold": iso + tuple(PotentialTerm("sine_mod", 10.0, q) for q in [(1, 0), (s, s), (-s, s), (0, 1)]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=10)
    ap.add_argument("--W", type=float, default=100.0)
    ap.add_argument("--T", type=float, default=3.0)
    ap.add_argument("--chi", type=int, default=50)
    ap.add_argument("--trap", nargs="+", default=["isotropic", "anharmonic", "fourfold", "eightfold"])
    ap.add_argument("--record-every", type=int, default=10)
    ap.add_argument("-o", "--output")
    a = ap.parse_args(argv)
    grid = QuanticsGrid(2, a.R, a.W)
    psi0 = gaussian_state(grid)
    out = open(a.output, "w", newline="") if a.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["trap", "t", "max_bond", "nl_max_bond", "width_x", "width_y"])
    warnings.simplefilter("ignore", PotentialWarning)
    all_traps = traps(a.W)
    for name in a.trap:
        cfg = EvolutionConfig(
            grid=grid, h_t=0.01, T=a.T, g=5.0, chi_max=a.chi, tol_nl=1e-8,
            potential=all_traps[name], record_every=a.record_every,
        )
        _, recs = evolve(psi0, cfg)
        for r in recs:
            w.writerow([name, repr(r.t), r.max_bond, r.nl_max_bond, repr(r.width_x), repr(r.width_y)])
        out.flush()


if __name__ == "__main__":
    main()
