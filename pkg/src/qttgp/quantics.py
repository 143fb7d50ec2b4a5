"""Binary (quantics) encoding of uniform grids on [-W, W)^d."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property

import numpy as np

ORDERINGS = ("interleaved", "serial")


@dataclass(frozen=True)
class QuanticsGrid:
    """Uniform periodic grid with L = 2**R points per dimension.

    Scale ``a`` of a dimension is the bit of significance 2**(R-1-a) in the
    position view and 2**a in the momentum view (``reversed=True``), which is
    the order in which the Fourier MPO emits frequencies.
    """

    dim: int
    R: int
    W: float
    ordering: str = "interleaved"
    reversed: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only d = 1 or 2 is supported")
        if self.R < 1:
            raise ValueError("R must be positive")
        if not self.W > 0:
            raise ValueError("W must be positive")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")

    @property
    def L(self) -> int:
        return 2**self.R

    @property
    def n_sites(self) -> int:
        return self.dim * self.R

    @property
    def h_r(self) -> float:
        return float(Fraction(2 * self.W) / self.L)

    @cached_property
    def layout(self) -> np.ndarray:
        """layout[d, a] = site carrying scale a of dimension d."""
        a = np.arange(self.R)
        if self.dim == 1:
            return a[None, :]
        if self.ordering == "interleaved":
            return np.stack([2 * a, 2 * a + 1])
        return np.stack([a, self.R + a])

    @cached_property
    def weights(self) -> np.ndarray:
        """weights[d, site] = integer significance of that site's bit for dimension d."""
        w = np.zeros((self.dim, self.n_sites), dtype=np.int64)
        sig = 2 ** np.arange(self.R, dtype=np.int64)
        if not self.reversed:
            sig = sig[::-1]
        for d in range(self.dim):
            w[d, self.layout[d]] = sig
        return w

    def momentum_view(self) -> QuanticsGrid:
        return replace(self, reversed=not self.reversed)

    def axis_grid(self) -> QuanticsGrid:
        """The one-dimensional grid of a single axis."""
        return replace(self, dim=1, ordering="interleaved")

    # ---- scalar maps

    def _check_index(self, m):
        m = np.atleast_1d(np.asarray(m, dtype=np.int64))
        if m.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} indices")
        if np.any(m < 0) or np.any(m >= self.L):
            raise ValueError("grid index out of range")
        return m

    def coord_of(self, m) -> np.ndarray:
        m = self._check_index(m)
        return np.array([self.coord(int(mi)) for mi in m])

    def coord(self, m):
        """x(m) = -W + m * 2W / 2**R, vectorized over integer arrays."""
        return -self.W + np.asarray(m) * (2.0 * self.W) / self.L

    def bits_of(self, m) -> list[int]:
        m = self._check_index(m)
        bits = np.zeros(self.n_sites, dtype=np.int64)
        for d in range(self.dim):
            w = self.weights[d]
            sites = self.layout[d]
            bits[sites] = (m[d] // w[sites]) % 2
        return bits.tolist()

    def index_of(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape != (self.n_sites,):
            raise ValueError(f"expected {self.n_sites} bits")
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("bits must be 0 or 1")
        m = self.weights @ bits
        return int(m[0]) if self.dim == 1 else tuple(int(v) for v in m)

    # ---- vectorized maps

    def indices(self, bits: np.ndarray) -> np.ndarray:
        """(M, n) bit array -> (M, d) integer grid indices."""
        return np.asarray(bits, dtype=np.int64) @ self.weights.T

    def coords(self, bits: np.ndarray) -> np.ndarray:
        """(M, n) bit array -> (M, d) coordinates."""
        return self.coord(self.indices(bits))

    def bits_array(self, m: np.ndarray) -> np.ndarray:
        """(M, d) integer indices -> (M, n) bits."""
        m = np.asarray(m, dtype=np.int64).reshape(-1, self.dim)
        out = np.zeros((m.shape[0], self.n_sites), dtype=np.int8)
        for d in range(self.dim):
            sites = self.layout[d]
            out[:, sites] = (m[:, d : d + 1] // self.weights[d, sites]) % 2
        return out

    def nearest_index(self, x) -> np.ndarray:
        m = np.rint((np.asarray(x, dtype=float) + self.W) * self.L / (2 * self.W)).astype(np.int64)
        return np.mod(m, self.L)

    # ---- dense reordering

    def to_natural(self, vec: np.ndarray) -> np.ndarray:
        """Site-ordered flat vector (site 0 most significant) -> array indexed by (m_x[, m_y])."""
        vec = np.asarray(vec)
        t = vec.reshape([2] * self.n_sites)
        order = []
        for d in range(self.dim):
            # most significant scale first
            sites = self.layout[d] if not self.reversed else self.layout[d][::-1]
            order.extend(sites.tolist())
        return t.transpose(order).reshape((self.L,) * self.dim)

    def from_natural(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr)
        t = arr.reshape([2] * self.n_sites)
        order = []
        for d in range(self.dim):
            sites = self.layout[d] if not self.reversed else self.layout[d][::-1]
            order.extend(sites.tolist())
        inv = np.argsort(order)
        return t.transpose(inv).ravel()

    def axes(self) -> list[np.ndarray]:
        return [self.coord(np.arange(self.L))] * self.dim
