"""Reference split-step solver on full arrays, plus memory accounting."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .operators import kinetic_diagonal_values, potential_values
from .quantics import QuanticsGrid
from .solver import EvolutionConfig
from .tt import to_dense

MAX_DENSE_BITS = 26
BYTES_PER_AMPLITUDE = 16
FFT_WORKSPACE_FACTOR = 2


class DenseCapError(MemoryError):
    pass


@dataclass
class DenseState:
    """Amplitudes on the natural (m_x[, m_y]) grid layout, l2-normalized."""

    values: np.ndarray
    grid: QuanticsGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        shape = (self.grid.L,) * self.grid.dim
        if self.values.shape != shape:
            self.values = self.values.reshape(shape)

    @classmethod
    def from_function(cls, grid: QuanticsGrid, f) -> DenseState:
        axes = np.meshgrid(*grid.axes(), indexing="ij")
        v = np.asarray(f(*axes), dtype=np.complex128)
        return cls(v / np.linalg.norm(v), grid)

    @classmethod
    def from_tt(cls, psi, grid: QuanticsGrid) -> DenseState:
        return cls(grid.to_natural(to_dense(psi)), grid)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def dense_bytes(R: int, d: int = 1) -> int:
    return BYTES_PER_AMPLITUDE * 2 ** (d * R) * (1 + FFT_WORKSPACE_FACTOR)


def _check_cap(grid: QuanticsGrid):
    if grid.n_sites > MAX_DENSE_BITS:
        raise DenseCapError(
            f"dense grid 2^{grid.n_sites} needs about {dense_bytes(grid.R, grid.dim) / 2**30:.1f} GiB; "
            f"refusing above d*R = {MAX_DENSE_BITS}"
        )


def _kinetic_factor(grid: QuanticsGrid, cfg: EvolutionConfig, h: float, filtered: bool) -> np.ndarray:
    spec = cfg.kinetic
    if spec.k_cut > grid.L // 2:
        spec = replace(spec, k_cut=grid.L // 2)
    ks = np.meshgrid(*([np.arange(grid.L)] * grid.dim), indexing="ij")
    k = np.stack([a.ravel() for a in ks], axis=1)
    vals = kinetic_diagonal_values(grid, replace(spec, h_t=h), k, filtered=filtered)
    return vals.reshape((grid.L,) * grid.dim)


def dense_evolve(
    psi0: DenseState,
    cfg: EvolutionConfig,
    filtered: bool = True,
    renormalize: bool = True,
    return_norms: bool = False,
):
    """Same product formula as the train solver, on dense arrays with FFTs."""
    grid = psi0.grid
    _check_cap(grid)
    n = cfg.n_steps
    h = cfg.h_t
    psi = psi0.values.copy()
    norms = []
    if n == 0:
        return (DenseState(psi, grid), norms) if return_norms else DenseState(psi, grid)
    axes = np.meshgrid(*grid.axes(), indexing="ij")
    V = potential_values(cfg.potential, grid, *axes) if cfg.potential else np.zeros_like(axes[0])
    V = np.asarray(V, dtype=float) * np.ones_like(axes[0])
    kin = _kinetic_factor(grid, cfg, h, filtered)
    ax = tuple(range(grid.dim))

    def vg(psi, tau):
        psi = psi * np.exp(-1j * V * tau)
        if cfg.g != 0:
            psi = psi * np.exp(-1j * cfg.g_lattice * tau * np.abs(psi) ** 2)
        return psi

    for i in range(n):
        psi = vg(psi, h / 2 if i == 0 else h)
        psi = np.fft.ifftn(kin * np.fft.fftn(psi, axes=ax), axes=ax)
        if i == n - 1:
            psi = vg(psi, h / 2)
        nrm = np.linalg.norm(psi)
        norms.append(float(nrm))
        if renormalize:
            psi = psi / nrm
    out = DenseState(psi, grid)
    return (out, norms) if return_norms else out


def chi_profile(n_sites: int, chi: int) -> list[int]:
    """Bond dimensions min(chi, 2^a, 2^(n-a)) for a = 1..n-1."""
    return [min(chi, 2**a, 2 ** (n_sites - a)) for a in range(1, n_sites)]


def memory_report(R: int, d: int = 1, chi: int = 10, profile=None) -> tuple[int, int]:
    """(dense_bytes, qtt_bytes) for one state.

    Dense counts the amplitudes plus twice that for FFT workspace; the train
    counts 16 * sum chi_{a-1} * 2 * chi_a over its cores.
    """
    n = d * R
    prof = chi_profile(n, chi) if profile is None else list(profile)
    if len(prof) != n - 1:
        raise ValueError("profile must have n - 1 entries")
    bonds = [1] + prof + [1]
    qtt = BYTES_PER_AMPLITUDE * sum(bonds[a] * 2 * bonds[a + 1] for a in range(n))
    return dense_bytes(R, d), qtt
