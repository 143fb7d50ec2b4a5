"""Maximum bond of the kinetic step MPO against R, with and without the low-pass filter.

    python scripts/kinetic_rank.py --rmin 4 --rmax 30 --unfiltered-max 14

Without the filter the rank climbs quickly past R ~ 12 and the
build gets expensive, hence the separate upper limit.
"""

import argparse
import csv
import sys
import time

from qttgp import tt as ttm
from qttgp.operators import KineticSpec, build_kinetic_mpo, build_kinetic_phase, build_qft_mpo
from qttgp.quantics import QuanticsGrid


def unfiltered_mpo(grid: QuanticsGrid, spec: KineticSpec) -> ttm.TensorTrainOperator:
    f = build_qft_mpo(grid=grid)
    pol = ttm.TruncationPolicy(None, spec.tol)
    diag = ttm.diagonal_mpo(build_kinetic_phase(grid, spec))
    return ttm.mpo_multiply(f.adjoint(), ttm.mpo_multiply(diag, f, pol), pol)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rmin", type=int, default=4)
    ap.add_argument("--rmax", type=int, default=30)
    ap.add_argument("--unfiltered-max", type=int, default=14)
    ap.add_argument("--k-cut", type=int, default=256)
    ap.add_argument("--W", type=float, default=200.0)
    ap.add_argument("--h-t", type=float, default=0.01)
    ap.add_argument("-o", "--output")
    a = ap.parse_args(argv)
    out = open(a.output, "w", newline="") if a.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["R", "filtered", "k_cut", "max_bond", "build_s"])
    for R in range(a.rmin, a.rmax + 1):
        grid = QuanticsGrid(1, R, a.W)
        spec = KineticSpec(h_t=a.h_t, k_cut=min(a.k_cut, grid.L // 2))
        t0 = time.perf_counter()
        op = build_kinetic_mpo(grid, spec, max_bond=10**6)
        w.writerow([R, 1, spec.k_cut, op.max_bond, round(time.perf_counter() - t0, 2)])
        if R <= a.unfiltered_max:
            t0 = time.perf_counter()
            op = unfiltered_mpo(grid, spec)
            w.writerow([R, 0, "", op.max_bond, round(time.perf_counter() - t0, 2)])
            out.flush()


if __name__ == "__main__":
    main()
