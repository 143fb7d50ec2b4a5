"""Operators for one Trotter step: Fourier MPO, kinetic evolution, potentials."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import tt as ttm
from .quantics import QuanticsGrid
from .tci import FunctionOracle, GridFunction, default_seeds, product_of_axes, tci_compress
from .tt import TensorTrain, TensorTrainOperator, TruncationPolicy

QFT_TOL = 1e-14


class KineticBuildError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


class PotentialWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KineticSpec:
    h_t: float
    mass: float = 1.0
    k_cut: int = 256
    beta: float = 2.0
    tol: float = 1e-10

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.k_cut < 1:
            raise ValueError("k_cut must be >= 1")

    def check(self, grid: QuanticsGrid):
        if self.k_cut > grid.L // 2:
            raise ValueError(f"k_cut={self.k_cut} exceeds L/2={grid.L // 2}")


POTENTIAL_KINDS = ("harmonic_x", "harmonic_y", "cross_xy", "sine_mod")


@dataclass(frozen=True)
class PotentialTerm:
    """One additive term of V; amplitudes are in energy units.

    harmonic_x: A (x/W)^2, harmonic_y: A (y/W)^2, cross_xy: A x y / W^2,
    sine_mod: A sin^2(q . r).
    """

    kind: str
    amplitude: float
    q: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if self.kind == "sine_mod":
            if self.q is None or not np.linalg.norm(self.q) > 0:
                raise ValueError("sine_mod needs a non-zero wave vector q")
            object.__setattr__(self, "q", tuple(float(v) for v in np.atleast_1d(self.q)))

    def __call__(self, W: float, x, y=None):
        A = self.amplitude
        if self.kind == "harmonic_x":
            return A * (x / W) ** 2
        if self.kind in ("harmonic_y", "cross_xy") and y is None:
            raise ValueError(f"{self.kind} needs a 2D grid")
        if self.kind == "harmonic_y":
            return A * (y / W) ** 2
        if self.kind == "cross_xy":
            return A * x * y / W**2
        q = self.q
        arg = q[0] * x if y is None else q[0] * x + (q[1] if len(q) > 1 else 0.0) * y
        return A * np.sin(arg) ** 2


def potential_values(terms: Sequence[PotentialTerm], grid: QuanticsGrid, *coords):
    total = 0.0
    for term in terms:
        total = total + term(grid.W, *coords)
    return total


# --------------------------------------------------------------------------
# Fourier transform


def _qft_string(n: int, out_site: int, in_sites: Sequence[int], in_scales: Sequence[int], l: int):
    """Phase string prod_j exp(-2 pi i tau_l sigma_j 2^(l-j-1)) as a 4-leg-per-site train.

    Physical index per site is p = 2 * out + in.
    """
    phase = {s: 2.0 ** (l - j - 1) for s, j in zip(in_sites, in_scales)}
    tau = np.array([0, 0, 1, 1])
    sig = np.array([0, 1, 0, 1])
    cores = []
    for s in range(n):
        if s < out_site:
            cores.append(np.ones((1, 4, 1), dtype=ttm.DTYPE))
        elif s == out_site:
            c = np.zeros((1, 4, 2), dtype=ttm.DTYPE)
            vals = np.exp(-2j * np.pi * tau * sig * phase[s])
            c[0, tau == 0, 0] = vals[tau == 0]
            c[0, tau == 1, 1] = vals[tau == 1]
            cores.append(c if s < n - 1 else c.sum(axis=2, keepdims=True))
        else:
            c = np.zeros((2, 4, 2), dtype=ttm.DTYPE)
            for t in (0, 1):
                c[t, :, t] = np.exp(-2j * np.pi * t * sig * phase[s]) if s in phase else 1.0
            cores.append(c if s < n - 1 else c.sum(axis=2, keepdims=True))
    return cores


def _hadamard4(a, b):
    return [
        (x[:, None, :, :, None] * y[None, :, :, None, :]).reshape(x.shape[0] * y.shape[0], 4, x.shape[2] * y.shape[2])
        for x, y in zip(a, b)
    ]


def build_qft_mpo(
    R: int | None = None,
    inverse: bool = False,
    *,
    grid: QuanticsGrid | None = None,
    dims: Sequence[int] | None = None,
    tol: float = QFT_TOL,
) -> TensorTrainOperator:
    """Unitary DFT as an MPO, exp(-2 pi i k m / L) / sqrt(L) per dimension.

    Input sites carry position bits (most significant scale first). The
    output on the site of scale l carries the frequency bit of weight 2**l,
    i.e. frequencies come out bit-reversed; ``grid.momentum_view()`` indexes
    them. ``inverse`` returns the adjoint. With ``dims`` only those dimensions
    are transformed (identity elsewhere).
    """
    if grid is None:
        if R is None:
            raise ValueError("need R or grid")
        grid = QuanticsGrid(1, R, 1.0)
    if not 1 <= grid.R <= 60:
        raise ValueError("R out of range")
    dims = range(grid.dim) if dims is None else dims
    n = grid.n_sites
    pol = TruncationPolicy(None, tol)
    ident = np.array([1, 0, 0, 1], dtype=ttm.DTYPE)
    acc = [np.ones((1, 4, 1), dtype=ttm.DTYPE) for _ in range(n)]
    for d in range(grid.dim):
        for s in grid.layout[d]:
            acc[s] = (np.full(4, 2**-0.5) if d in dims else ident).reshape(1, 4, 1).astype(ttm.DTYPE)
    for d in dims:
        sites = grid.layout[d]
        for l in range(grid.R):
            string = _qft_string(n, int(sites[l]), sites[l:].tolist(), list(range(l, grid.R)), l)
            acc = ttm._truncate_cores(_hadamard4(acc, string), pol)
    op = TensorTrainOperator([c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in acc])
    return op.adjoint() if inverse else op


# --------------------------------------------------------------------------
# kinetic term


def kinetic_energy(grid: QuanticsGrid, k: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Finite-difference dispersion 2 / (m h_r^2) * sum_i sin^2(pi k_i / L)."""
    k = np.asarray(k).reshape(-1, grid.dim)
    return 2.0 / (mass * grid.h_r**2) * np.sum(np.sin(np.pi * k / grid.L) ** 2, axis=1)


def folded(grid: QuanticsGrid, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k)
    return np.minimum(k, grid.L - k)


def lowpass_values(grid: QuanticsGrid, k: np.ndarray, k_cut: float, beta: float) -> np.ndarray:
    """prod_i 1 / (exp((k~_i - k_cut) beta) + 1) on the folded index k~ = min(k, L - k)."""
    k = np.asarray(k).reshape(-1, grid.dim)
    return np.prod(expit(-(folded(grid, k) - k_cut) * beta), axis=1)


def kinetic_diagonal_values(grid: QuanticsGrid, spec: KineticSpec, k: np.ndarray, filtered: bool = True):
    vals = np.exp(-1j * kinetic_energy(grid, k, spec.mass) * spec.h_t)
    if filtered:
        vals = vals * lowpass_values(grid, k, spec.k_cut, spec.beta)
    return vals


def _axis_momentum_tci(grid: QuanticsGrid, f, tol: float, k_cut: int | None = None) -> TensorTrain:
    """One-axis train of f(k) in bit-reversed order, k = 0..L-1."""
    mview = grid.axis_grid()
    mview = mview if mview.reversed else mview.momentum_view()
    oracle = FunctionOracle(lambda bits: f(mview.indices(bits)[:, 0]), mview.n_sites, True)
    # support sits near k = 0 and k = L with edges at k_cut and L - k_cut;
    # nested pivots grown from one of these can miss the others
    L = grid.L
    marks = {0, 1, L // 2, L - 1}
    if k_cut is not None:
        marks |= {k % L for k in (k_cut // 2, k_cut - 1, k_cut, k_cut + 4, L - k_cut - 4, L - k_cut, L - k_cut // 2)}
    pts = np.array(sorted(marks))[:, None]
    seeds = np.concatenate([mview.bits_array(pts), default_seeds(mview)[1:]])
    return tci_compress(oracle, tol=tol, seeds=seeds)


def _separable_momentum(grid: QuanticsGrid, f, tol: float, dims=None, k_cut=None) -> TensorTrain:
    """prod over ``dims`` of the one-axis factor f(k_d); all axes of a grid share f."""
    dims = range(grid.dim) if dims is None else dims
    factor = _axis_momentum_tci(grid, f, tol, k_cut)
    return product_of_axes(grid, {d: factor for d in dims}, tol=1e-14)


def build_kinetic_phase(grid: QuanticsGrid, spec: KineticSpec) -> TensorTrain:
    """Diagonal exp(-i H_K h_t) in the bit-reversed momentum site order."""
    axis = grid.axis_grid()
    return _separable_momentum(grid, lambda k: kinetic_diagonal_values(axis, spec, k, filtered=False), spec.tol)


def build_lowpass(grid: QuanticsGrid, spec: KineticSpec) -> TensorTrain:
    spec.check(grid)
    axis = grid.axis_grid()
    return _separable_momentum(
        grid, lambda k: lowpass_values(axis, k, spec.k_cut, spec.beta), spec.tol, k_cut=spec.k_cut
    )


def build_filtered_kinetic_phase(grid: QuanticsGrid, spec: KineticSpec, dims: Sequence[int] | None = None) -> TensorTrain:
    """Theta * exp(-i H_K h_t) over the axes in ``dims`` (all by default).

    Both factors separate over axes, so each axis is one cross interpolation
    of the product Theta_1 * exp(-i H_1 h_t).
    """
    spec.check(grid)
    axis = grid.axis_grid()
    return _separable_momentum(grid, lambda k: kinetic_diagonal_values(axis, spec, k), spec.tol, dims, spec.k_cut)


def build_kinetic_mpo(
    grid: QuanticsGrid,
    spec: KineticSpec,
    max_bond: int = 64,
    dims: Sequence[int] | None = None,
) -> TensorTrainOperator:
    """U_Delta = F^-1 (Theta U_K) F as one MPO, built once per run.

    ``dims`` restricts the kinetic evolution to those dimensions (the others
    see the identity); the per-dimension factors commute and multiply to the
    full operator.
    """
    spec.check(grid)
    diag = build_filtered_kinetic_phase(grid, spec, dims)
    fwd = build_qft_mpo(grid=grid, dims=dims)
    pol = TruncationPolicy(None, spec.tol)
    op = ttm.mpo_multiply(fwd.adjoint(), ttm.mpo_multiply(ttm.diagonal_mpo(diag), fwd, pol), pol)
    if op.max_bond > max_bond:
        raise KineticBuildError(
            f"kinetic MPO bond dimension {op.max_bond} exceeds {max_bond}; raise tol or lower k_cut"
        )
    return op


def kinetic_factors(grid: QuanticsGrid, spec: KineticSpec, max_bond: int = 64) -> list[TensorTrainOperator]:
    """One kinetic MPO per dimension; their product is the full kinetic step."""
    if grid.dim == 1:
        return [build_kinetic_mpo(grid, spec, max_bond)]
    return [build_kinetic_mpo(grid, spec, max_bond, dims=[d]) for d in range(grid.dim)]


def calibrate_kcut(
    grid: QuanticsGrid,
    spec_template: KineticSpec,
    trial: TensorTrain,
    start: int = 256,
    norm_tol: float = 1e-3,
    return_operators: bool = False,
):
    """Double k_cut from ``start`` until one kinetic step keeps |1 - |psi|| < norm_tol."""
    k_cut = min(start, grid.L // 2)
    while True:
        spec = replace(spec_template, k_cut=k_cut)
        ops = kinetic_factors(grid, spec)
        psi = trial
        for op in ops:
            psi = ttm.apply_naive(op, psi, TruncationPolicy(None, 1e-12))
        drift = abs(1.0 - ttm.norm(psi) / ttm.norm(trial))
        if drift < norm_tol:
            return (k_cut, ops) if return_operators else k_cut
        if k_cut >= grid.L // 2:
            raise CalibrationError(
                f"no k_cut up to L/2={grid.L // 2} conserves the norm (drift {drift:.2e}); "
                "the trial state is not band-limited on this grid"
            )
        k_cut = min(2 * k_cut, grid.L // 2)


# --------------------------------------------------------------------------
# potentials


def _axis_of(term: PotentialTerm, dim: int) -> int | None:
    """Axis a term depends on alone, or None when it couples axes."""
    if dim == 1 or term.kind == "harmonic_x":
        return 0
    if term.kind == "harmonic_y":
        return 1
    if term.kind == "sine_mod":
        q = np.asarray(term.q + (0.0,) * (dim - len(term.q)))
        nz = np.flatnonzero(q)
        return int(nz[0]) if len(nz) == 1 else None
    return None


def _phase_train(grid: QuanticsGrid, term: PotentialTerm, h_t: float, tol: float, max_rank, worst: list) -> TensorTrain:
    axis = _axis_of(term, grid.dim)

    def f(*coords):
        v = term(grid.W, *coords)
        worst[0] = max(worst[0], float(np.max(np.abs(v))) * abs(h_t))
        return np.exp(-1j * v * h_t)

    if grid.dim == 1:
        return tci_compress(GridFunction(grid, f), tol=tol, max_rank=max_rank, seeds=default_seeds(grid))
    if axis is not None:
        sub = grid.axis_grid()
        q = None if term.q is None else (term.q[axis],)
        one = PotentialTerm("harmonic_x" if term.kind != "sine_mod" else "sine_mod", term.amplitude, q)
        t = _phase_train(sub, one, h_t, tol, max_rank, worst)
        return product_of_axes(grid, {axis: t})
    return tci_compress(GridFunction(grid, f), tol=tol, max_rank=max_rank, seeds=default_seeds(grid))


def build_potential_diagonal(
    grid: QuanticsGrid,
    terms: PotentialTerm | Sequence[PotentialTerm],
    h_t: float,
    tol: float = 1e-10,
    max_rank: int | None = None,
) -> TensorTrain:
    """exp(-i V h_t) on the position grid, one cross interpolation per term.

    Terms that depend on a single axis are learned on that axis alone and
    embedded. Several terms are multiplied together.
    """
    terms = [terms] if isinstance(terms, PotentialTerm) else list(terms)
    worst = [0.0]
    out = None
    for term in terms:
        t = _phase_train(grid, term, h_t, tol, max_rank, worst)
        out = t if out is None else ttm.hadamard_apply(out, t, TruncationPolicy(max_rank, 1e-14))
    if out is None:
        out = ttm.constant(grid.n_sites)
    if worst[0] > 1:
        warnings.warn(
            f"|V h_t| reaches {worst[0]:.3g} > 1 on sampled points; the phase field may need a smaller h_t",
            PotentialWarning,
            stacklevel=2,
        )
    return out


def build_potential_mpo(
    grid: QuanticsGrid,
    term: PotentialTerm,
    h_t: float,
    tol: float = 1e-10,
    max_rank: int | None = None,
) -> TensorTrainOperator:
    """Diagonal MPO of one potential term; terms commute so each gets its own operator."""
    if term.amplitude == 0:
        return ttm.identity_mpo(grid.n_sites)
    return ttm.diagonal_mpo(build_potential_diagonal(grid, term, h_t, tol, max_rank))
