"""Tensor trains (MPS) and tensor-train operators (MPO) over binary sites.

Core layout:
    TensorTrain cores          (left_bond, 2, right_bond)
    TensorTrainOperator cores  (left_bond, out, in, right_bond)

Site 0 is the leftmost core. All data is complex128.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

DTYPE = np.complex128


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond cap plus per-bond relative Frobenius cutoff.

    ``rel_tol`` discards the smallest singular values of each bond as long as
    their root-sum-square stays below ``rel_tol`` times the bond's total weight.
    """

    max_rank: int | None = None
    rel_tol: float = 0.0

    def __post_init__(self):
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be positive")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")


EXACT = TruncationPolicy(None, 0.0)


def _check_cores(cores, ndim):
    if not cores:
        raise ValueError("a tensor train needs at least one core")
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        raise ValueError("boundary bonds must have dimension 1")
    for a, (c1, c2) in enumerate(zip(cores[:-1], cores[1:])):
        if c1.shape[-1] != c2.shape[0]:
            raise ValueError(f"bond mismatch between sites {a} and {a + 1}")
    for c in cores:
        if c.ndim != ndim or any(p != 2 for p in c.shape[1:-1]):
            raise ValueError(f"cores must be rank-{ndim} with physical dimension 2")


@dataclass(frozen=True, eq=False)
class TensorTrain:
    cores: tuple
    canonical_center: int | None = None

    def __init__(self, cores: Sequence[np.ndarray], canonical_center: int | None = None):
        cores = tuple(np.asarray(c, dtype=DTYPE) for c in cores)
        _check_cores(cores, 3)
        for c in cores:
            c.flags.writeable = False
        object.__setattr__(self, "cores", cores)
        object.__setattr__(self, "canonical_center", canonical_center)

    def __len__(self):
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[2] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def nbytes(self) -> int:
        return sum(c.nbytes for c in self.cores)

    def __mul__(self, scalar):
        cores = list(self.cores)
        c = self.canonical_center if self.canonical_center is not None else 0
        cores[c] = cores[c] * scalar
        return TensorTrain(cores, self.canonical_center)

    __rmul__ = __mul__

    def conj(self) -> TensorTrain:
        return TensorTrain([c.conj() for c in self.cores], self.canonical_center)

    def __repr__(self):
        return f"TensorTrain(n={len(self)}, bonds={self.bond_dims})"


@dataclass(frozen=True, eq=False)
class TensorTrainOperator:
    cores: tuple

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = tuple(np.asarray(c, dtype=DTYPE) for c in cores)
        _check_cores(cores, 4)
        for c in cores:
            c.flags.writeable = False
        object.__setattr__(self, "cores", cores)

    def __len__(self):
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[3] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def adjoint(self) -> TensorTrainOperator:
        """Conjugate transpose, core by core."""
        return TensorTrainOperator([c.conj().transpose(0, 2, 1, 3) for c in self.cores])

    def conj(self) -> TensorTrainOperator:
        return TensorTrainOperator([c.conj() for c in self.cores])

    def __repr__(self):
        return f"TensorTrainOperator(n={len(self)}, bonds={self.bond_dims})"


# --------------------------------------------------------------------------
# construction helpers


def product_state(vectors: Sequence[Sequence[complex]]) -> TensorTrain:
    return TensorTrain([np.asarray(v, dtype=DTYPE).reshape(1, 2, 1) for v in vectors])


def constant(n: int, value: complex = 1.0) -> TensorTrain:
    cores = [np.ones((1, 2, 1), dtype=DTYPE) for _ in range(n)]
    cores[0] = cores[0] * value
    return TensorTrain(cores)


def identity_mpo(n: int) -> TensorTrainOperator:
    eye = np.eye(2, dtype=DTYPE).reshape(1, 2, 2, 1)
    return TensorTrainOperator([eye] * n)


def embed(tt: TensorTrain, sites: Sequence[int], n: int) -> TensorTrain:
    """Place the cores of ``tt`` on ``sites`` of an n-site train, constant along the others."""
    sites = list(sites)
    if len(sites) != len(tt) or sorted(sites) != sites or len(set(sites)) != len(sites):
        raise ValueError("sites must be increasing and match the train length")
    if sites and (sites[0] < 0 or sites[-1] >= n):
        raise ValueError("site out of range")
    pos = {s: k for k, s in enumerate(sites)}
    cores, r = [], 1
    for s in range(n):
        if s in pos:
            c = tt.cores[pos[s]]
            r = c.shape[2]
        else:
            c = np.repeat(np.eye(r, dtype=DTYPE)[:, None, :], 2, axis=1)
        cores.append(c)
    return TensorTrain(cores)


def diagonal_mpo(diag: TensorTrain) -> TensorTrainOperator:
    """Promote a TT to the diagonal operator with that TT on its diagonal."""
    cores = []
    for c in diag.cores:
        w = np.zeros((c.shape[0], 2, 2, c.shape[2]), dtype=DTYPE)
        w[:, 0, 0, :] = c[:, 0, :]
        w[:, 1, 1, :] = c[:, 1, :]
        cores.append(w)
    return TensorTrainOperator(cores)


def random_tt(n: int, rank: int, rng: np.random.Generator | None = None) -> TensorTrain:
    rng = np.random.default_rng(rng)
    dims = [1] + [min(rank, 2 ** min(a, n - a)) for a in range(1, n)] + [1]
    cores = [
        rng.standard_normal((dims[a], 2, dims[a + 1])) + 1j * rng.standard_normal((dims[a], 2, dims[a + 1]))
        for a in range(n)
    ]
    tt = TensorTrain(cores)
    return tt * (1.0 / norm(tt))


def from_dense(vec: np.ndarray, n: int | None = None) -> TensorTrain:
    """Exact tensorization of a length-2^n vector (site 0 = most significant bit)."""
    vec = np.asarray(vec, dtype=DTYPE).ravel()
    if n is None:
        n = int(round(np.log2(vec.size)))
    if vec.size != 2**n:
        raise ValueError("vector length must be 2**n")
    cores = []
    rest = vec.reshape(1, -1)
    for _ in range(n - 1):
        left = rest.shape[0]
        u, s, vh = np.linalg.svd(rest.reshape(left * 2, -1), full_matrices=False)
        keep = max(1, int(np.sum(s > s[0] * 1e-15))) if s[0] > 0 else 1
        cores.append(u[:, :keep].reshape(left, 2, keep))
        rest = s[:keep, None] * vh[:keep]
    cores.append(rest.reshape(rest.shape[0], 2, 1))
    return TensorTrain(cores, canonical_center=n - 1)


def mpo_from_dense(mat: np.ndarray, n: int | None = None) -> TensorTrainOperator:
    """Exact MPO of a 2^n x 2^n matrix (row = out index)."""
    mat = np.asarray(mat, dtype=DTYPE)
    if n is None:
        n = int(round(np.log2(mat.shape[0])))
    # interleave (out_a, in_a) per site
    t = mat.reshape([2] * (2 * n))
    order = [i for a in range(n) for i in (a, n + a)]
    tt = from_dense(t.transpose(order).ravel(), 2 * n)
    return _pairs_to_mpo(tt.cores)


def _pairs_to_mpo(cores) -> TensorTrainOperator:
    out = []
    for c_out, c_in in zip(cores[0::2], cores[1::2]):
        w = np.tensordot(c_out, c_in, axes=(2, 0))  # (l, o, i, r)
        out.append(w)
    return TensorTrainOperator(out)


def to_dense(x: TensorTrain | TensorTrainOperator) -> np.ndarray:
    """Materialize a TT as a 2^n vector or an MPO as a 2^n x 2^n matrix."""
    if isinstance(x, TensorTrainOperator):
        n = len(x)
        acc = np.ones((1, 1, 1), dtype=DTYPE)
        for w in x.cores:
            acc = np.einsum("oia,asjb->osijb", acc, w).reshape(acc.shape[0] * 2, acc.shape[1] * 2, w.shape[3])
        return acc[:, :, 0]
    acc = np.ones((1, 1), dtype=DTYPE)
    for c in x.cores:
        acc = np.tensordot(acc, c, axes=(1, 0)).reshape(-1, c.shape[2])
    return acc[:, 0]


# --------------------------------------------------------------------------
# evaluation and inner products


def evaluate(tt: TensorTrain, bits: Sequence[int]) -> complex:
    bits = list(bits)
    if len(bits) != len(tt):
        raise ValueError(f"expected {len(tt)} bits, got {len(bits)}")
    v = np.ones(1, dtype=DTYPE)
    for c, b in zip(tt.cores, bits):
        if b not in (0, 1):
            raise ValueError("bits must be 0 or 1")
        v = v @ c[:, b, :]
    return complex(v[0])


def evaluate_batch(tt: TensorTrain, bits: np.ndarray) -> np.ndarray:
    """Evaluate at many multi-indices; ``bits`` has shape (M, n)."""
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[1] != len(tt):
        raise ValueError(f"expected an (M, {len(tt)}) bit array")
    v = np.ones((bits.shape[0], 1), dtype=DTYPE)
    for a, c in enumerate(tt.cores):
        sl = c.transpose(1, 0, 2)[bits[:, a]]  # (M, l, r)
        v = np.einsum("ml,mlr->mr", v, sl)
    return v[:, 0]


def sample(tt: TensorTrain, k: int, rng=None) -> np.ndarray:
    """Draw ``k`` multi-indices with probability |tt(idx)|^2 / ||tt||^2."""
    rng = np.random.default_rng(rng)
    cores = canonicalize(tt, 0).cores
    out = np.zeros((k, len(cores)), dtype=np.int8)
    v = np.ones((k, 1), dtype=DTYPE)
    for a, c in enumerate(cores):
        cand = np.einsum("ml,lsr->msr", v, c)  # right part is orthonormal
        w = np.sum(np.abs(cand) ** 2, axis=2)
        p1 = w[:, 1] / np.maximum(w.sum(axis=1), 1e-300)
        s = (rng.random(k) < p1).astype(np.int8)
        out[:, a] = s
        v = cand[np.arange(k), s]
    return out


def inner(a: TensorTrain, b: TensorTrain) -> complex:
    """<a|b>, conjugating ``a``."""
    if len(a) != len(b):
        raise ValueError("length mismatch")
    env = np.ones((1, 1), dtype=DTYPE)
    for ca, cb in zip(a.cores, b.cores):
        t = np.tensordot(env, cb, axes=(1, 0))  # (la, s, rb)
        env = np.tensordot(ca.conj(), t, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


def inner_diag(a: TensorTrain, diag: TensorTrain, b: TensorTrain) -> complex:
    """sum_m conj(a_m) diag_m b_m without forming the product train."""
    if not len(a) == len(b) == len(diag):
        raise ValueError("length mismatch")
    env = np.ones((1, 1, 1), dtype=DTYPE)
    for ca, cd, cb in zip(a.cores, diag.cores, b.cores):
        t = np.tensordot(env, cb, axes=(2, 0))  # (la, ld, s, rb)
        t = np.einsum("adsr,dse->aser", t, cd)
        env = np.tensordot(ca.conj(), t, axes=([0, 1], [0, 1]))  # (ra, rd, rb)
    return complex(env[0, 0, 0])


def norm(tt: TensorTrain) -> float:
    # A QR sweep is backward stable; <tt|tt> loses digits on badly scaled cores.
    if tt.canonical_center is None:
        tt = canonicalize(tt, 0)
    return float(np.linalg.norm(tt.cores[tt.canonical_center]))


def add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Exact sum (bond dimensions add)."""
    if len(a) != len(b):
        raise ValueError("length mismatch")
    n = len(a)
    if n == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            cores.append(np.concatenate([ca, cb], axis=2))
        elif k == n - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            c = np.zeros((ca.shape[0] + cb.shape[0], 2, ca.shape[2] + cb.shape[2]), dtype=DTYPE)
            c[: ca.shape[0], :, : ca.shape[2]] = ca
            c[ca.shape[0] :, :, ca.shape[2] :] = cb
            cores.append(c)
    return TensorTrain(cores)


# --------------------------------------------------------------------------
# canonical forms and truncation (generic over the physical leg size)


def _svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def _kept_rank(s: np.ndarray, policy: TruncationPolicy) -> int:
    keep = len(s)
    if policy.rel_tol > 0 and len(s) > 1:
        w = s**2
        total = w.sum()
        tail = np.cumsum(w[::-1])[::-1]  # tail[k] = sum_{i>=k} w_i
        ok = np.nonzero(tail <= policy.rel_tol**2 * total)[0]
        if ok.size:
            keep = max(1, int(ok[0]))
    if policy.max_rank is not None:
        keep = min(keep, policy.max_rank)
    return max(keep, 1)


def _left_sweep_qr(cores, stop=None):
    """Left-orthogonalize cores[0:stop] in place, pushing R factors right."""
    stop = len(cores) - 1 if stop is None else stop
    for a in range(stop):
        l, p, r = cores[a].shape
        q, rr = np.linalg.qr(cores[a].reshape(l * p, r))
        cores[a] = q.reshape(l, p, q.shape[1])
        cores[a + 1] = np.tensordot(rr, cores[a + 1], axes=(1, 0))
    return cores


def _right_sweep_qr(cores, stop=0):
    """Right-orthogonalize cores[stop+1:] in place, pushing factors left."""
    for a in range(len(cores) - 1, stop, -1):
        l, p, r = cores[a].shape
        q, rr = np.linalg.qr(cores[a].reshape(l, p * r).T)
        cores[a] = q.T.reshape(q.shape[1], p, r)
        cores[a - 1] = np.tensordot(cores[a - 1], rr.T, axes=(2, 0))
    return cores


def _truncate_cores(cores, policy: TruncationPolicy):
    """Left-canonicalize then SVD-truncate right to left; center ends at 0."""
    cores = _left_sweep_qr(list(cores))
    for a in range(len(cores) - 1, 0, -1):
        l, p, r = cores[a].shape
        u, s, vh = _svd(cores[a].reshape(l, p * r))
        k = _kept_rank(s, policy)
        cores[a] = vh[:k].reshape(k, p, r)
        cores[a - 1] = np.tensordot(cores[a - 1], u[:, :k] * s[:k], axes=(2, 0))
    return cores


def canonicalize(tt: TensorTrain, center: int = 0) -> TensorTrain:
    n = len(tt)
    if not 0 <= center < n:
        raise ValueError("center out of range")
    cores = _left_sweep_qr(list(tt.cores), center)
    cores = _right_sweep_qr(cores, center)
    return TensorTrain(cores, canonical_center=center)


def truncate(tt: TensorTrain, policy: TruncationPolicy = EXACT) -> TensorTrain:
    return TensorTrain(_truncate_cores(tt.cores, policy), canonical_center=0)


def truncate_mpo(op: TensorTrainOperator, policy: TruncationPolicy = EXACT) -> TensorTrainOperator:
    flat = [w.reshape(w.shape[0], 4, w.shape[3]) for w in op.cores]
    cores = _truncate_cores(flat, policy)
    return TensorTrainOperator([c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in cores])


# --------------------------------------------------------------------------
# products


def hadamard_apply(diag: TensorTrain, tt: TensorTrain, policy: TruncationPolicy = EXACT) -> TensorTrain:
    """Element-wise product diag * tt, i.e. the diagonal operator of ``diag`` applied to ``tt``."""
    if len(diag) != len(tt):
        raise ValueError("length mismatch")
    cores = []
    for d, c in zip(diag.cores, tt.cores):
        prod = d[:, None, :, :, None] * c[None, :, :, None, :]  # (ld, lc, s, rd, rc)
        cores.append(prod.reshape(d.shape[0] * c.shape[0], 2, d.shape[2] * c.shape[2]))
    return TensorTrain(_truncate_cores(cores, policy), canonical_center=0)


def apply_naive(op: TensorTrainOperator, tt: TensorTrain, policy: TruncationPolicy = EXACT) -> TensorTrain:
    """Exact MPO-MPS contraction (bonds multiply) followed by SVD truncation."""
    if len(op) != len(tt):
        raise ValueError("length mismatch")
    cores = []
    for w, c in zip(op.cores, tt.cores):
        t = np.tensordot(w, c, axes=(2, 1))  # (lw, s, rw, lc, rc)
        t = t.transpose(0, 3, 1, 2, 4)
        cores.append(t.reshape(w.shape[0] * c.shape[0], 2, w.shape[3] * c.shape[2]))
    return TensorTrain(_truncate_cores(cores, policy), canonical_center=0)


def mpo_multiply(a: TensorTrainOperator, b: TensorTrainOperator, policy: TruncationPolicy = EXACT) -> TensorTrainOperator:
    """Operator product a @ b by naive core contraction plus truncation."""
    if len(a) != len(b):
        raise ValueError("length mismatch")
    cores = []
    for wa, wb in zip(a.cores, b.cores):
        t = np.tensordot(wa, wb, axes=(2, 1))  # (la, o, ra, lb, i, rb)
        t = t.transpose(0, 3, 1, 4, 2, 5)
        cores.append(t.reshape(wa.shape[0] * wb.shape[0], 4, wa.shape[3] * wb.shape[3]))
    cores = _truncate_cores(cores, policy)
    return TensorTrainOperator([c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in cores])


# --------------------------------------------------------------------------
# variational fitting


def _env_left(env, x, w, t):
    tmp = np.tensordot(env, t, axes=(2, 0))  # (x, w, u, t')
    tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))  # (x, t', s, w')
    tmp = np.tensordot(x.conj(), tmp, axes=([0, 1], [0, 2]))  # (x', t', w')
    return tmp.transpose(0, 2, 1)


def _env_right(env, x, w, t):
    tmp = np.tensordot(t, env, axes=(2, 2))  # (t, u, x', w')
    tmp = np.tensordot(w, tmp, axes=([2, 3], [1, 3]))  # (w, s, t, x')
    tmp = np.tensordot(x.conj(), tmp, axes=([1, 2], [1, 3]))  # (x, w, t)
    return tmp


def _two_site_target(lenv, renv, w1, t1, w2, t2):
    tmp = np.tensordot(lenv, t1, axes=(2, 0))  # (x, w, u1, t')
    tmp = np.tensordot(tmp, w1, axes=([1, 2], [0, 2]))  # (x, t', s1, w')
    tmp = np.tensordot(tmp, t2, axes=(1, 0))  # (x, s1, w', u2, t'')
    tmp = np.tensordot(tmp, w2, axes=([2, 3], [0, 2]))  # (x, s1, t'', s2, w'')
    tmp = np.tensordot(tmp, renv, axes=([2, 4], [2, 1]))  # (x, s1, s2, x')
    return tmp


def apply_fit(
    op: TensorTrainOperator,
    tt: TensorTrain,
    guess: TensorTrain | None = None,
    policy: TruncationPolicy = EXACT,
    max_sweeps: int = 4,
) -> tuple[TensorTrain, bool]:
    """Variational two-site fit of ``op @ tt`` starting from ``guess``.

    Each sweep solves the local least-squares problem on two neighbouring
    sites and splits the result by a truncated SVD. Returns the fitted train
    and whether the squared norm of the fit settled to within ``policy.rel_tol``
    (floored at 1e-12) between two consecutive sweeps.
    """
    n = len(tt)
    if len(op) != n:
        raise ValueError("length mismatch")
    if guess is None:
        guess = tt
    if len(guess) != n:
        raise ValueError("guess length mismatch")
    if n == 1:
        return apply_naive(op, tt, policy), True
    if policy.max_rank is not None and guess.max_bond > policy.max_rank:
        guess = truncate(guess, TruncationPolicy(policy.max_rank))

    x = _right_sweep_qr(list(guess.cores))
    W, T = op.cores, tt.cores
    one = np.ones((1, 1, 1), dtype=DTYPE)
    lenv = [one] + [None] * n
    renv = [None] * n + [one]
    for a in range(n - 1, 1, -1):
        renv[a] = _env_right(renv[a + 1], x[a], W[a], T[a])

    stop = max(policy.rel_tol, 1e-12)
    prev = None
    converged = False
    center = 0
    for half in range(2 * max_sweeps):
        if half % 2 == 0:
            for a in range(n - 1):
                theta = _two_site_target(lenv[a], renv[a + 2], W[a], T[a], W[a + 1], T[a + 1])
                xl, _, _, xr = theta.shape
                u, s, vh = _svd(theta.reshape(xl * 2, 2 * xr))
                k = _kept_rank(s, policy)
                x[a] = u[:, :k].reshape(xl, 2, k)
                x[a + 1] = (s[:k, None] * vh[:k]).reshape(k, 2, xr)
                lenv[a + 1] = _env_left(lenv[a], x[a], W[a], T[a])
            center = n - 1
        else:
            for a in range(n - 2, -1, -1):
                theta = _two_site_target(lenv[a], renv[a + 2], W[a], T[a], W[a + 1], T[a + 1])
                xl, _, _, xr = theta.shape
                u, s, vh = _svd(theta.reshape(xl * 2, 2 * xr))
                k = _kept_rank(s, policy)
                x[a + 1] = vh[:k].reshape(k, 2, xr)
                x[a] = (u[:, :k] * s[:k]).reshape(xl, 2, k)
                renv[a + 1] = _env_right(renv[a + 2], x[a + 1], W[a + 1], T[a + 1])
            center = 0
        weight = float(np.sum(s[:k] ** 2))
        if prev is not None and abs(weight - prev) <= stop * max(abs(weight), 1e-300):
            converged = True
            break
        prev = weight
    return TensorTrain(x, canonical_center=center), converged
