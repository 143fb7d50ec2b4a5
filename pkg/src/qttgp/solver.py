"""Second-order split-step integrator for the Gross-Pitaevskii equation on quantics trains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import tt as ttm
from .operators import (
    KineticSpec,
    PotentialTerm,
    build_potential_diagonal,
    calibrate_kcut,
    kinetic_factors,
)
from .quantics import QuanticsGrid
from .tci import GridFunction, TrainFunction, default_seeds, product_of_axes, tci_compress
from .tt import TensorTrain, TensorTrainOperator, TruncationPolicy


class IntegrationError(RuntimeError):
    def __init__(self, msg: str, last_good_time: float | None = None):
        super().__init__(msg)
        self.last_good_time = last_good_time


class NumericalConsistencyError(RuntimeError):
    pass


MAX_NORM_DRIFT = 0.1


@dataclass(frozen=True)
class EvolutionConfig:
    """Run parameters. ``chi_max=None`` leaves ranks to ``tol_trunc`` alone."""

    grid: QuanticsGrid
    h_t: float
    T: float
    g: float = 0.0
    chi_max: int | None = 10
    tol_nl: float = 1e-10
    tol_build: float = 1e-10
    tol_trunc: float = 1e-12
    kinetic: KineticSpec | None = None
    potential: tuple[PotentialTerm, ...] = ()
    record_every: int = 1
    calibrate: bool = False
    fit_sweeps: int = 2
    rng_seed: int = 0  # sampling of non-linear seeds and TCI probes

    def __post_init__(self):
        if self.h_t == 0 or not math.isfinite(self.h_t):
            raise ValueError("h_t must be finite and non-zero")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        ratio = self.T / abs(self.h_t)
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T / |h_t| = {ratio} is not an integer")
        if self.chi_max is not None and self.chi_max < 1:
            raise ValueError("chi_max must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        object.__setattr__(self, "potential", tuple(self.potential))
        kin = self.kinetic if self.kinetic is not None else KineticSpec(h_t=self.h_t, tol=self.tol_build)
        object.__setattr__(self, "kinetic", replace(kin, h_t=self.h_t))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / abs(self.h_t)))

    @property
    def g_lattice(self) -> float:
        """Coupling seen by l2-normalized amplitudes.

        g multiplies the continuum density |psi(x)|^2 = |psi_m|^2 / h_r^d.
        """
        return self.g / self.grid.h_r**self.grid.dim

    @property
    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.chi_max, self.tol_trunc)


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    norm_before_renorm: float
    max_bond: int
    nl_max_bond: int
    mean_x: float
    width_x: float
    mean_y: float | None = None
    width_y: float | None = None


@dataclass(frozen=True)
class GPState:
    psi: TensorTrain
    t: float = 0.0
    peak: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class StepOperators:
    """Everything a step needs, built once per run.

    ``potential_half`` / ``potential_full`` hold exp(-i V_j h_t / 2) and
    exp(-i V_j h_t) as diagonal trains, one per additive term.
    """

    kinetic: tuple[TensorTrainOperator, ...]
    potential_half: tuple[TensorTrain, ...]
    potential_full: tuple[TensorTrain, ...]
    k_cut: int

    def reversed(self) -> StepOperators:
        """Operators for h_t -> -h_t: adjoints of the unitary factors."""
        return StepOperators(
            tuple(op.adjoint() for op in self.kinetic),
            tuple(d.conj() for d in self.potential_half),
            tuple(d.conj() for d in self.potential_full),
            self.k_cut,
        )


def build_operators(cfg: EvolutionConfig, trial: TensorTrain | None = None) -> StepOperators:
    grid = cfg.grid
    spec = cfg.kinetic
    if spec.k_cut > grid.L // 2:
        spec = replace(spec, k_cut=grid.L // 2)
    if cfg.calibrate and trial is not None:
        k_cut, kin = calibrate_kcut(grid, spec, trial, start=spec.k_cut, return_operators=True)
    else:
        k_cut, kin = spec.k_cut, kinetic_factors(grid, spec)
    active = [p for p in cfg.potential if p.amplitude != 0]
    half = tuple(build_potential_diagonal(grid, p, cfg.h_t / 2, cfg.tol_build) for p in active)
    full = tuple(build_potential_diagonal(grid, p, cfg.h_t, cfg.tol_build) for p in active)
    return StepOperators(tuple(kin), half, full, k_cut)


# --------------------------------------------------------------------------
# initial states and observables


def gaussian_state(
    grid: QuanticsGrid,
    center: Sequence[float] | float = 0.0,
    width: Sequence[float] | float = 1.0,
    k: Sequence[float] | float = 0.0,
    tol: float = 1e-12,
) -> TensorTrain:
    """l2-normalized exp(-(r - c)^2 / (2 w^2)) exp(i k . r), learned by TCI."""
    c = np.broadcast_to(np.asarray(center, float), (grid.dim,))
    w = np.broadcast_to(np.asarray(width, float), (grid.dim,))
    kk = np.broadcast_to(np.asarray(k, float), (grid.dim,))
    if np.any(w <= 0):
        raise ValueError("width must be positive")

    axis = grid.axis_grid()
    factors = {}
    for d in range(grid.dim):
        def f(x, d=d):
            return np.exp(-((x - c[d]) ** 2) / (2 * w[d] ** 2) + 1j * kk[d] * x)

        pts = axis.nearest_index((c[d] + np.linspace(-3, 3, 13) * w[d])[:, None])
        seeds = np.concatenate([axis.bits_array(pts), default_seeds(axis)])
        factors[d] = tci_compress(GridFunction(axis, f), tol=tol, seeds=seeds)
    psi = product_of_axes(grid, factors, tol=tol)
    return psi * (1.0 / ttm.norm(psi))


@lru_cache(maxsize=32)
def coordinate_diagonals(grid: QuanticsGrid, axis: int, tol: float = 1e-13) -> tuple[TensorTrain, TensorTrain]:
    """Diagonal trains of x_axis and x_axis^2."""
    if not 0 <= axis < grid.dim:
        raise ValueError("axis out of range")
    sub = grid.axis_grid()
    seeds = default_seeds(sub)
    x1 = tci_compress(GridFunction(sub, lambda x: x), tol=tol, seeds=seeds)
    x2 = tci_compress(GridFunction(sub, lambda x: x**2), tol=tol, seeds=seeds)
    return product_of_axes(grid, {axis: x1}), product_of_axes(grid, {axis: x2})


def measure_moments(psi: TensorTrain, grid: QuanticsGrid, dim_axis: int = 0) -> tuple[float, float]:
    """(<x>, sqrt(<x^2> - <x>^2)) along one axis, normalized by ||psi||^2."""
    x1, x2 = coordinate_diagonals(grid, dim_axis)
    n2 = ttm.norm(psi) ** 2
    m1 = ttm.inner_diag(psi, x1, psi).real / n2
    m2 = ttm.inner_diag(psi, x2, psi).real / n2
    var = m2 - m1 * m1
    if var < -1e-10 * max(1.0, m2):
        raise NumericalConsistencyError(f"negative variance {var:.3e}")
    return float(m1), float(math.sqrt(max(var, 0.0)))


def sample_density(psi: TensorTrain, grid: QuanticsGrid, window, n_points) -> tuple[np.ndarray, np.ndarray]:
    """|psi|^2 at the grid points nearest a uniform sampling of ``window``.

    ``window`` is (a, b) or one (a, b) per dimension; returns coordinates of
    shape (M, d) and densities of shape (M,). Densities follow the l2
    convention; divide by h_r**d for a continuum density.
    """
    win = np.asarray(window, float).reshape(-1, 2)
    if win.shape[0] == 1:
        win = np.repeat(win, grid.dim, axis=0)
    if win.shape[0] != grid.dim:
        raise ValueError("window dimension mismatch")
    if np.any(win[:, 0] > win[:, 1]) or np.any(win[:, 0] < -grid.W) or np.any(win[:, 1] > grid.W):
        raise ValueError(f"window {win.tolist()} not inside [-{grid.W}, {grid.W}]")
    n = np.broadcast_to(np.asarray(n_points, int), (grid.dim,))
    if np.any(n < 1):
        raise ValueError("n_points must be >= 1")
    axes = [grid.nearest_index(np.linspace(a, b, k)) for (a, b), k in zip(win, n)]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    vals = ttm.evaluate_batch(psi, grid.bits_array(mesh))
    return grid.coord(mesh), np.abs(vals) ** 2


def support_seeds(psi: TensorTrain, k: int = 16, rng=0) -> np.ndarray:
    """``k`` indices drawn from |psi|^2, the largest-|psi| one first."""
    idx = ttm.sample(psi, k, rng)
    order = np.argsort(-np.abs(ttm.evaluate_batch(psi, idx)), kind="stable")
    return idx[order]


def find_peak(psi: TensorTrain, rng=0) -> np.ndarray:
    return support_seeds(psi, 32, rng)[0]


# --------------------------------------------------------------------------
# stepping


def _nl_transform(g: float, h_t: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda v: np.exp(-1j * g * h_t * (v.real**2 + v.imag**2)) * v


def nonlinear_step(
    state: GPState,
    g: float,
    h_t: float,
    tol_nl: float = 1e-10,
    max_rank: int | None = None,
    return_peak: bool = False,
    rng=0,
):
    """exp(-i g |psi|^2 h_t) psi rebuilt by cross interpolation of the pointwise map.

    Seeds are the previous peak plus indices drawn from |psi|^2, so every
    region carrying weight is reached even when the density splits into
    pieces the nested pivots cannot connect.
    """
    psi = state.psi
    oracle = TrainFunction(psi, _nl_transform(g, h_t))
    seeds = support_seeds(psi, 16, rng)
    if state.peak is not None:
        seeds = np.concatenate([np.asarray(state.peak, np.int8)[None, :], seeds])
    out = tci_compress(oracle, tol=tol_nl, max_rank=max_rank, seeds=seeds, rng=rng)
    if not return_peak:
        return out
    vals = np.abs(oracle(seeds))
    return out, seeds[int(np.argmax(vals))]


def _potential_and_nonlinear(psi, peak, diags, g, h, cfg):
    for d in diags:
        psi = ttm.hadamard_apply(d, psi, cfg.policy)
    if g == 0:
        return psi, peak, psi.max_bond
    psi, peak = nonlinear_step(
        GPState(psi, peak=peak), g, h, cfg.tol_nl, cfg.chi_max, return_peak=True, rng=cfg.rng_seed
    )
    return psi, peak, psi.max_bond


@dataclass(frozen=True)
class StepInfo:
    norm_before_renorm: float
    max_bond: int  # largest bond of any train produced during the step
    nl_max_bond: int  # largest bond out of the potential + non-linear stages


def trotter_step(
    state: GPState,
    ops: StepOperators,
    cfg: EvolutionConfig,
    leading: bool = True,
    trailing: bool = True,
    h_t: float | None = None,
) -> tuple[GPState, StepInfo]:
    """One step of U_{V+g}(a h) U_Delta(h) [U_{V+g}(h/2)].

    ``leading`` selects a = 1/2 (first step) or a = 1 (interior half steps
    merged with the previous step's trailing half). ``trailing`` appends the
    closing half step. The returned state is renormalized.
    """
    h = cfg.h_t if h_t is None else h_t
    psi, peak = state.psi, state.peak
    diags = ops.potential_half if leading else ops.potential_full
    psi, peak, nl_bond = _potential_and_nonlinear(psi, peak, diags, cfg.g_lattice, h / 2 if leading else h, cfg)
    for op in ops.kinetic:
        psi, _ = ttm.apply_fit(op, psi, guess=psi, policy=cfg.policy, max_sweeps=cfg.fit_sweeps)
    top = max(nl_bond, psi.max_bond)
    if trailing:
        psi, peak, nl2 = _potential_and_nonlinear(psi, peak, ops.potential_half, cfg.g_lattice, h / 2, cfg)
        nl_bond = max(nl_bond, nl2)
        top = max(top, nl2)
    nrm = ttm.norm(psi)
    if not abs(1.0 - nrm) <= MAX_NORM_DRIFT:
        raise IntegrationError(
            f"norm drift {abs(1 - nrm):.3g} in one step exceeds {MAX_NORM_DRIFT}; check k_cut and h_t",
            state.t,
        )
    psi = ttm.canonicalize(psi * (1.0 / nrm), 0)
    return GPState(psi, state.t + h, peak), StepInfo(nrm, top, nl_bond)


def _record(state: GPState, grid: QuanticsGrid, info: StepInfo) -> ObservableRecord:
    mx, wx = measure_moments(state.psi, grid, 0)
    my = wy = None
    if grid.dim == 2:
        my, wy = measure_moments(state.psi, grid, 1)
    return ObservableRecord(state.t, info.norm_before_renorm, info.max_bond, info.nl_max_bond, mx, wx, my, wy)


def evolve(
    psi0: TensorTrain,
    cfg: EvolutionConfig,
    ops: StepOperators | None = None,
    backward: bool = False,
    callback: Callable[[ObservableRecord, GPState], None] | None = None,
    t0: float = 0.0,
) -> tuple[GPState, list[ObservableRecord]]:
    """Run T / |h_t| steps of the second-order product formula.

    One record per ``record_every`` steps (and at the end); its bond fields
    are maxima over the steps since the previous record. Interior states
    sit between the kinetic factors of the product formula; the final one
    carries the closing half step. With ``backward`` the run goes
    h_t -> -h_t on the adjoint operators. ``callback`` sees each record
    together with the state it describes.
    """
    n = cfg.n_steps
    nrm0 = ttm.norm(psi0)
    if abs(nrm0 - 1) > 1e-8:
        raise ValueError(f"psi0 must be normalized (norm {nrm0})")
    state = GPState(psi0, t0, None)
    records: list[ObservableRecord] = []
    if n == 0:
        return state, records
    if ops is None:
        ops = build_operators(cfg, psi0)
    h = cfg.h_t
    if backward:
        ops, h = ops.reversed(), -h
    if cfg.g != 0:
        state = replace(state, peak=find_peak(psi0, cfg.rng_seed))
    last_good = t0
    window = (0, 0)  # bond maxima since the last record
    for i in range(n):
        try:
            state, info = trotter_step(state, ops, cfg, leading=(i == 0), trailing=(i == n - 1), h_t=h)
        except IntegrationError as exc:
            exc.last_good_time = last_good
            raise
        state = replace(state, t=t0 + (i + 1) * h)  # no drift from repeated addition
        window = (max(window[0], info.max_bond), max(window[1], info.nl_max_bond))
        if (i + 1) % cfg.record_every == 0 or i == n - 1:
            rec = _record(state, cfg.grid, replace(info, max_bond=window[0], nl_max_bond=window[1]))
            window = (0, 0)
            records.append(rec)
            last_good = rec.t
            if callback is not None:
                callback(rec, state)
    return state, records


def forward_backward_error(
    psi0: TensorTrain, cfg: EvolutionConfig, ops: StepOperators | None = None
) -> tuple[float, list[ObservableRecord]]:
    """1 - |<psi_back | psi0>|^2 after evolving to T and back to 0."""
    if cfg.n_steps == 0:
        return 0.0, []
    if ops is None:
        ops = build_operators(cfg, psi0)
    fwd, rec_f = evolve(psi0, cfg, ops)
    back, rec_b = evolve(fwd.psi, cfg, ops, backward=True, t0=fwd.t)
    ov = abs(ttm.inner(back.psi, psi0)) ** 2
    return float(min(1.0, max(0.0, 1.0 - ov))), rec_f + rec_b


def forward_backward_scan(
    psi0: TensorTrain, cfg: EvolutionConfig, times: Sequence[float], ops: StepOperators | None = None
) -> dict[float, float]:
    """epsilon at several T from one forward pass, returning to 0 from each T.

    Splitting the forward run at the checkpoints only changes where the half
    potential steps sit, so each value equals ``forward_backward_error`` at
    that T up to truncation.
    """
    times = sorted(times)
    if ops is None:
        ops = build_operators(cfg, psi0)
    eps, psi, t_prev = {}, psi0, 0.0
    for T in times:
        if T == 0:
            eps[T] = 0.0
            continue
        if T > t_prev:
            psi = evolve(psi, replace(cfg, T=T - t_prev), ops, t0=t_prev)[0].psi
        back = evolve(psi, replace(cfg, T=T), ops, backward=True, t0=T)[0].psi
        eps[T] = float(min(1.0, max(0.0, 1.0 - abs(ttm.inner(back, psi0)) ** 2)))
        t_prev = T
    return eps
