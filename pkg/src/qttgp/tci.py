"""Tensor cross interpolation over binary sites.

Two-site accumulative variant: each bond keeps a nested set of row pivots
(prefixes) and column pivots (suffixes). Visiting a bond evaluates the
two-site block f(I[a-1] x s_a, s_{a+1} x J[a+1]), eliminates the existing
pivots from it and appends the largest remaining entries as new pivots until
the residual falls below ``tol * max|f|``. Pivots are never removed, so the
nesting I[a] < I[a-1] x {0,1}, J[a] < {0,1} x J[a+1] holds throughout.
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np
import scipy.linalg

from .quantics import QuanticsGrid
from .tt import (
    DTYPE,
    TensorTrain,
    TruncationPolicy,
    add,
    constant,
    embed,
    evaluate_batch,
    hadamard_apply,
    norm,
    truncate,
)


class NullFunctionError(RuntimeError):
    """Every seed evaluated to (numerically) zero."""


class TCIError(RuntimeError):
    pass


class FunctionOracle:
    """A function of ``n`` binary sites, evaluated on (M, n) bit arrays."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], n: int, thread_safe: bool = False):
        self.func = func
        self.n = n
        self.thread_safe = thread_safe
        self.eval_count = 0

    def __call__(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int8).reshape(-1, self.n)
        self.eval_count += bits.shape[0]
        return np.asarray(self.func(bits), dtype=DTYPE).reshape(bits.shape[0])

    def block(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Values on left x {0,1}^k x right as an array of shape (p, 2, ..., 2, q)."""
        p, a = left.shape
        q, b = right.shape
        k = self.n - a - b
        mid = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int8).reshape(2**k, k)
        full = np.empty((p, 2**k, q, self.n), dtype=np.int8)
        full[..., :a] = left[:, None, None, :]
        full[..., a : a + k] = mid[None, :, None, :]
        full[..., a + k :] = right[None, None, :, :]
        vals = self(full.reshape(-1, self.n))
        return vals.reshape((p,) + (2,) * k + (q,))


class GridFunction(FunctionOracle):
    """Oracle for f(x) or f(x, y) sampled on a quantics grid."""

    def __init__(self, grid: QuanticsGrid, f: Callable, thread_safe: bool = True):
        self.grid = grid
        self.f = f

        def func(bits):
            x = grid.coords(bits)
            return f(*(x[:, d] for d in range(grid.dim)))

        super().__init__(func, grid.n_sites, thread_safe)


def product_of_axes(grid: QuanticsGrid, trains: dict, tol: float = 0.0) -> TensorTrain:
    """f(r) = prod_d f_d(r_d) from one-axis trains ``{axis: train}``.

    Each factor is placed on its axis' sites with identity cores elsewhere;
    the product is exact up to a relative Frobenius cutoff ``tol``.
    """
    out = None
    for axis, t in sorted(trains.items()):
        if len(t) != grid.R:
            raise ValueError("axis train must have R sites")
        e = embed(t, grid.layout[axis].tolist(), grid.n_sites)
        out = e if out is None else hadamard_apply(out, e, TruncationPolicy(None, tol))
    if out is None:
        return constant(grid.n_sites)
    return out


class TrainFunction(FunctionOracle):
    """Oracle for transform(psi(idx)) where psi is a tensor train.

    Partial contractions of pivot prefixes and suffixes are cached, so a
    two-site block costs O(p * chi^2 + chi^2 * q) instead of a full
    left-to-right contraction per entry.
    """

    def __init__(self, tt: TensorTrain, transform: Callable[[np.ndarray], np.ndarray] | None = None):
        self.tt = tt
        self.transform = transform if transform is not None else (lambda v: v)
        self._left = {}
        self._right = {}
        super().__init__(lambda bits: self.transform(evaluate_batch(tt, bits)), len(tt), thread_safe=False)

    def _left_envs(self, pref: np.ndarray) -> np.ndarray:
        p, a = pref.shape
        if a == 0:
            return np.ones((p, 1), dtype=DTYPE)
        keys = [row.tobytes() for row in pref]
        missing = [i for i, k in enumerate(keys) if k not in self._left]
        if missing:
            sub = pref[missing]
            parents = self._left_envs(sub[:, :-1])
            core = self.tt.cores[a - 1].transpose(1, 0, 2)[sub[:, -1]]  # (m, l, r)
            new = np.einsum("ml,mlr->mr", parents, core)
            for i, v in zip(missing, new):
                self._left[keys[i]] = v
        return np.stack([self._left[k] for k in keys])

    def _right_envs(self, suf: np.ndarray) -> np.ndarray:
        q, b = suf.shape
        if b == 0:
            return np.ones((q, 1), dtype=DTYPE)
        keys = [row.tobytes() for row in suf]
        missing = [i for i, k in enumerate(keys) if k not in self._right]
        if missing:
            sub = suf[missing]
            children = self._right_envs(sub[:, 1:])
            core = self.tt.cores[self.n - b].transpose(1, 0, 2)[sub[:, 0]]  # (m, l, r)
            new = np.einsum("mlr,mr->ml", core, children)
            for i, v in zip(missing, new):
                self._right[keys[i]] = v
        return np.stack([self._right[k] for k in keys])

    def block(self, left, right):
        p, a = left.shape
        q, b = right.shape
        k = self.n - a - b
        self.eval_count += p * q * 2**k
        acc = self._left_envs(left)  # (p, chi)
        for s in range(a, a + k):
            acc = np.tensordot(acc, self.tt.cores[s], axes=(acc.ndim - 1, 0))
        acc = np.tensordot(acc, self._right_envs(right), axes=(acc.ndim - 1, 1))
        return self.transform(acc)


class CrossInterpolation:
    """State of a two-site accumulative cross interpolation."""

    def __init__(self, oracle: FunctionOracle, seed: np.ndarray, tol: float, max_rank: int | None = None):
        n = oracle.n
        self.oracle = oracle
        self.n = n
        self.tol = tol
        self.max_rank = max_rank
        seed = np.asarray(seed, dtype=np.int8).reshape(n)
        f0 = oracle(seed[None, :])[0]
        self.fmax = abs(f0)
        # pivots per bond a (between sites a and a+1), in insertion order:
        #   row k of bond a = I[a-1][ipar[a][k]] + (ibit[a][k],)
        #   col k of bond a = (jbit[a][k],) + J[a+1][jchild[a][k]]
        self.I = [seed[None, : a + 1].copy() for a in range(n - 1)]
        self.J = [seed[None, a + 1 :].copy() for a in range(n - 1)]
        # row k sits at parent * 2 + bit of the two-site matrix; col k at bit * q + child
        self._rows = [[int(seed[a])] for a in range(n - 1)]
        self._cols = [[(int(seed[a + 1]), 0)] for a in range(n - 1)]
        self.bond_errors = [np.inf] * (n - 1)
        self.error_estimate = np.inf
        self.sweeps = 0

    @property
    def ranks(self) -> list[int]:
        return [len(i) for i in self.I]

    def add_global_pivots(self, indices: np.ndarray) -> int:
        """Insert full multi-indices as pivots wherever nesting allows.

        A seed joins bond a when its prefix and suffix are both new there,
        its parent prefix / child suffix exist (or join at the neighbouring
        bond) and its Schur residual exceeds ``tol * max|f|``. Returns the
        number of seeds that entered at least one bond.
        """
        n = self.n
        indices = np.asarray(indices, dtype=np.int8).reshape(-1, n)
        if n == 1 or len(indices) == 0:
            return 0
        fx = self.oracle(indices)
        self.fmax = max(self.fmax, float(np.abs(fx).max()))
        entered = 0
        for x, fv in zip(indices, fx):
            rows = [{r.tobytes(): k for k, r in enumerate(self.I[a])} for a in range(n - 1)]
            cols = [{c.tobytes(): k for k, c in enumerate(self.J[a])} for a in range(n - 1)]
            fresh = [
                x[: a + 1].tobytes() not in rows[a] and x[a + 1 :].tobytes() not in cols[a] for a in range(n - 1)
            ]
            res = self._schur_residuals(x, fv, [a for a in range(n - 1) if fresh[a]])
            cap = self.max_rank if self.max_rank is not None else np.inf
            ok = [
                fresh[a] and len(self.I[a]) < cap and abs(res.get(a, 0.0)) > self.tol * self.fmax for a in range(n - 1)
            ]
            changed = True
            while changed:
                changed = False
                for a in range(n - 1):
                    if not ok[a]:
                        continue
                    has_parent = a == 0 or ok[a - 1] or x[:a].tobytes() in rows[a - 1]
                    has_child = a == n - 2 or ok[a + 1] or x[a + 2 :].tobytes() in cols[a + 1]
                    if not (has_parent and has_child):
                        ok[a] = False
                        changed = True
            if not any(ok):
                continue
            entered += 1
            # parents first so row positions can be resolved left to right
            for a in range(n - 1):
                if not ok[a]:
                    continue
                parent = 0 if a == 0 else {r.tobytes(): k for k, r in enumerate(self.I[a - 1])}[x[:a].tobytes()]
                self._rows[a].append(parent * 2 + int(x[a]))
                self.I[a] = np.concatenate([self.I[a], x[None, : a + 1]])
            for a in range(n - 2, -1, -1):
                if not ok[a]:
                    continue
                child = 0 if a == n - 2 else {c.tobytes(): k for k, c in enumerate(self.J[a + 1])}[x[a + 2 :].tobytes()]
                self._cols[a].append((int(x[a + 1]), child))
                self.J[a] = np.concatenate([self.J[a], x[None, a + 1 :]])
        return entered

    def _schur_residuals(self, x: np.ndarray, fx: complex, bonds) -> dict:
        """f(x) minus its cross interpolation through the current pivots, per bond."""
        out = {}
        for a in bonds:
            rows = np.concatenate([self.I[a], x[None, : a + 1]])
            cols = np.concatenate([self.J[a], x[None, a + 1 :]])
            v = self.oracle.block(rows, cols)
            p = len(self.I[a])
            try:
                out[a] = complex(fx - v[p, :p] @ np.linalg.solve(v[:p, :p], v[:p, p]))
            except np.linalg.LinAlgError:
                out[a] = 0.0
        return out

    def saturated(self) -> bool:
        """True when no bond can take another pivot."""
        cap = self.max_rank if self.max_rank is not None else np.inf
        return all(r >= min(cap, 2 ** (a + 1), 2 ** (self.n - a - 1)) for a, r in enumerate(self.ranks))

    def _left_set(self, a):
        return self.I[a - 1] if a > 0 else np.zeros((1, 0), dtype=np.int8)

    def _right_set(self, a):
        return self.J[a + 1] if a + 1 < self.n - 1 else np.zeros((1, 0), dtype=np.int8)

    def update_bond(self, a: int) -> int:
        left, right = self._left_set(a), self._right_set(a)
        p, q = left.shape[0], right.shape[0]
        pi = self.oracle.block(left, right)  # (p, 2, 2, q)
        E = pi.reshape(2 * p, 2 * q).copy()
        self.fmax = max(self.fmax, float(np.abs(E).max()))
        rows = self._rows[a]
        cols = [b * q + c for b, c in self._cols[a]]
        for i, j in zip(rows, cols):
            piv = E[i, j]
            if piv == 0:
                raise TCIError(f"singular pivot matrix at bond {a}")
            E -= np.outer(E[:, j], E[i, :] / piv)
        added = 0
        thresh = self.tol * self.fmax
        absE = np.abs(E)
        while self.max_rank is None or len(rows) < self.max_rank:
            k = int(np.argmax(absE))
            if absE.flat[k] <= thresh or absE.flat[k] == 0:
                break
            i, j = divmod(k, 2 * q)
            rows.append(i)
            cols.append(j)
            self._cols[a].append((j // q, j % q))
            E -= np.outer(E[:, j], E[i, :] / E[i, j])
            absE = np.abs(E)
            added += 1
        self.bond_errors[a] = float(absE.max()) / self.fmax if self.fmax > 0 else 0.0
        if added:
            r = np.asarray(rows[-added:])
            c = np.asarray(cols[-added:])
            new_i = np.concatenate([left[r // 2], (r % 2)[:, None].astype(np.int8)], axis=1)
            new_j = np.concatenate([(c // q)[:, None].astype(np.int8), right[c % q]], axis=1)
            self.I[a] = np.concatenate([self.I[a], new_i])
            self.J[a] = np.concatenate([self.J[a], new_j])
        return added

    def sweep(self, forward: bool = True) -> int:
        bonds = range(self.n - 1) if forward else range(self.n - 2, -1, -1)
        added = sum(self.update_bond(a) for a in bonds)
        self.sweeps += 1
        self.error_estimate = max(self.bond_errors, default=0.0)
        return added

    def run(self, max_sweeps: int = 40, n_probe: int = 256, rng=None) -> CrossInterpolation:
        """Sweep until no pivot is added, then audit on random indices.

        Nested pivots only see a sliver of the index space, so the block
        residual can understate the true error (two-site blocks of a function
        that ignores one of two interleaved variables are all rank one, for
        instance). When ``n_probe`` random indices reveal an error above
        ``tol * max|f|``, the worst of them are inserted as global pivots, the
        working tolerance is lowered tenfold and sweeping resumes.
        """
        self.probe_error = 0.0
        if self.n == 1:
            self.error_estimate = 0.0
            return self
        rng = np.random.default_rng(0 if rng is None else rng)
        target = self.tol
        forward = True
        for _ in range(max_sweeps):
            added = self.sweep(forward)
            forward = not forward
            if added:
                continue
            if n_probe <= 0 or self.saturated():
                break
            idx = rng.integers(0, 2, size=(n_probe, self.n), dtype=np.int8)
            fvals = self.oracle(idx)
            self.fmax = max(self.fmax, float(np.abs(fvals).max()))
            err = np.abs(fvals - evaluate_batch(self.tensor_train(), idx))
            self.probe_error = float(err.max()) / self.fmax if self.fmax > 0 else 0.0
            if err.max() <= target * self.fmax:
                break
            worst = np.argsort(-err)[:8]
            worst = worst[err[worst] > target * self.fmax]
            entered = self.add_global_pivots(idx[worst])
            if not entered and self.tol <= 1e-14:
                break
            self.tol = max(self.tol / 10, 1e-14)
        self.tol = target
        return self

    def tensor_train(self) -> TensorTrain:
        n = self.n
        if n == 1:
            vals = self.oracle.block(np.zeros((1, 0), np.int8), np.zeros((1, 0), np.int8))
            return TensorTrain([vals.reshape(1, 2, 1)])
        cores = []
        for a in range(n):
            left = self.I[a - 1] if a > 0 else np.zeros((1, 0), dtype=np.int8)
            right = self.J[a] if a < n - 1 else np.zeros((1, 0), dtype=np.int8)
            t = self.oracle.block(left, right)  # (p, 2, r)
            p, _, r = t.shape
            if a == n - 1:
                cores.append(t)
                continue
            # C P^-1 = U (U[rows])^-1 with U the elimination columns; U[rows] is
            # lower triangular in pivot order, so no explicit inverse is formed.
            E = t.reshape(2 * p, r).copy()
            U = np.empty_like(E)
            for k, i in enumerate(self._rows[a]):
                U[:, k] = E[:, k]
                E -= np.outer(E[:, k], E[i, :] / E[i, k])
            lower = U[self._rows[a]]
            core = scipy.linalg.solve_triangular(lower.T, U.T, lower=False, check_finite=False).T
            cores.append(core.reshape(p, 2, r))
        return TensorTrain(cores)

    def pivots(self) -> np.ndarray:
        """All full multi-indices I[a] + J[a] used as pivots."""
        full = [np.concatenate([self.I[a], self.J[a]], axis=1) for a in range(self.n - 1)]
        return np.unique(np.concatenate(full), axis=0) if full else np.zeros((0, self.n), np.int8)


def _pick_seed(oracle: FunctionOracle, seeds) -> np.ndarray:
    seeds = np.asarray(seeds, dtype=np.int8).reshape(-1, oracle.n)
    vals = np.abs(oracle(seeds))
    best = int(np.argmax(vals))
    if not vals[best] > 1e-300:
        raise NullFunctionError("all seeds evaluate to zero; supply a seed where the function is non-negligible")
    return seeds[best]


def default_seeds(grid: QuanticsGrid, rng=None, n_random: int = 8) -> np.ndarray:
    """Grid point nearest the origin plus ``n_random`` uniform random indices."""
    rng = np.random.default_rng(0 if rng is None else rng)
    origin = grid.bits_array(grid.nearest_index(np.zeros(grid.dim))[None, :])
    rand = rng.integers(0, 2, size=(n_random, grid.n_sites), dtype=np.int8)
    return np.concatenate([origin, rand])


def cross_interpolate(
    oracle: FunctionOracle,
    tol: float = 1e-10,
    max_rank: int | None = None,
    seeds=None,
    max_sweeps: int = 40,
    rng=None,
) -> CrossInterpolation:
    if not (tol > 0 or max_rank is not None):
        raise ValueError("need tol > 0 or a finite max_rank")
    if seeds is None:
        rng = np.random.default_rng(0 if rng is None else rng)
        seeds = np.concatenate(
            [np.zeros((1, oracle.n), np.int8), rng.integers(0, 2, size=(8, oracle.n), dtype=np.int8)]
        )
    seeds = np.asarray(seeds, dtype=np.int8).reshape(-1, oracle.n)
    ci = CrossInterpolation(oracle, _pick_seed(oracle, seeds), tol, max_rank)
    if len(seeds) > 1:
        order = np.argsort(-np.abs(oracle(seeds)), kind="stable")
        ci.add_global_pivots(seeds[order[1:]])
    return ci.run(max_sweeps, rng=rng)


class _ResidualOracle(FunctionOracle):
    def __init__(self, oracle: FunctionOracle, tt: TensorTrain):
        self.base = oracle
        self.approx = TrainFunction(tt)
        super().__init__(lambda bits: oracle(bits) - evaluate_batch(tt, bits), oracle.n, oracle.thread_safe)

    def block(self, left, right):
        vals = self.base.block(left, right) - self.approx.block(left, right)
        self.eval_count += vals.size
        return vals


def tci_compress(
    oracle: FunctionOracle,
    tol: float = 1e-10,
    max_rank: int | None = None,
    seeds=None,
    max_sweeps: int = 40,
    rng=None,
    max_corrections: int = 4,
) -> TensorTrain:
    """Cross interpolation to a tensor train.

    Nested pivots can miss a region of support that no seed could be
    inserted into. A seed the result essentially misses (error above half its
    value, value above ``tol * max|f|``) starts a cross interpolation of the
    residual, which is added and recompressed.
    """
    ci = cross_interpolate(oracle, tol, max_rank, seeds, max_sweeps, rng)
    tt = ci.tensor_train()
    if seeds is None or max_corrections <= 0:
        return tt
    seeds = np.asarray(seeds, dtype=np.int8).reshape(-1, oracle.n)
    fvals = oracle(seeds)
    fmax = max(ci.fmax, float(np.abs(fvals).max()))
    for _ in range(max_corrections):
        err = np.abs(fvals - evaluate_batch(tt, seeds))
        missed = (err > 0.5 * np.abs(fvals)) & (np.abs(fvals) > tol * fmax)
        if not missed.any():
            break
        err = np.where(missed, err, 0.0)
        res = _ResidualOracle(oracle, tt)
        rci = CrossInterpolation(res, seeds[int(np.argmax(err))], tol * fmax / max(err.max(), 1e-300), max_rank)
        rci.run(max_sweeps, rng=rng)
        total = add(tt, rci.tensor_train())
        frob = norm(total)
        rel = tol * fmax / frob if frob > 0 else 0.0
        tt = truncate(total, TruncationPolicy(max_rank, min(rel, 1e-2)))
    return tt


def residual_probe(ci: CrossInterpolation, k: int, rng=None, tt: TensorTrain | None = None) -> float:
    """max |f - tt| over ``k`` uniform random indices and every pivot."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(rng)
    tt = ci.tensor_train() if tt is None else tt
    idx = np.concatenate([rng.integers(0, 2, size=(k, ci.n), dtype=np.int8), ci.pivots()])
    return float(np.max(np.abs(ci.oracle(idx) - evaluate_batch(tt, idx))))
