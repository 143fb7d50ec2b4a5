"""Dense vs tensor-train memory and step time over R (one interior step each).

    python scripts/memory_crossover.py --rmin 10 --rmax 30 --dense-max 22 -o mem.csv

Accounted bytes come from ``memory_report``; measured columns are tracemalloc
peaks and wall times of one step of each solver on the W=200 benchmark trap.
"""

import argparse
import csv
import sys
import time
import tracemalloc
import warnings

import numpy as np

from qttgp.cli import _time_step
from qttgp.dense import DenseState, dense_evolve, memory_report
from qttgp.operators import PotentialTerm, PotentialWarning
from qttgp.quantics import QuanticsGrid
from qttgp.solver import EvolutionConfig


def dense_step(R: int) -> tuple[float, int]:
    grid = QuanticsGrid(1, R, 200.0)
    pot = (PotentialTerm("harmonic_x", 400.0), PotentialTerm("sine_mod", 10.0, (1e4,)))
    cfg = EvolutionConfig(grid=grid, h_t=0.01, T=0.01, g=5.0, potential=pot)
    psi0 = DenseState.from_function(grid, lambda x: np.exp(-(x**2) / 2))
    t0 = time.perf_counter()
    dense_evolve(psi0, cfg)
    ms = (time.perf_counter() - t0) * 1e3
    tracemalloc.start()
    dense_evolve(psi0, cfg)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return ms, peak


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rmin", type=int, default=10)
    ap.add_argument("--rmax", type=int, default=30)
    ap.add_argument("--chi", type=int, default=10)
    ap.add_argument("--dense-max", type=int, default=22, help="largest R for the measured dense step")
    ap.add_argument("-o", "--output")
    a = ap.parse_args(argv)
    fields = ["R", "dense_bytes", "qtt_bytes", "qtt_step_ms", "qtt_step_peak", "dense_step_ms", "dense_step_peak"]
    out = open(a.output, "w", newline="") if a.output else sys.stdout
    w = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    warnings.simplefilter("ignore", PotentialWarning)
    for R in range(a.rmin, a.rmax + 1):
        d, q = memory_report(R, 1, a.chi)
        row = {"R": R, "dense_bytes": d, "qtt_bytes": q}
        row["qtt_step_ms"], row["qtt_step_peak"] = _time_step(R, 1, a.chi)
        if R <= a.dense_max:
            ms, peak = dense_step(R)
            row["dense_step_ms"], row["dense_step_peak"] = round(ms, 3), peak
        w.writerow(row)
        out.flush()


if __name__ == "__main__":
    main()
