import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qttgp import tt as ttm
from qttgp.operators import (
    CalibrationError,
    KineticBuildError,
    KineticSpec,
    PotentialTerm,
    PotentialWarning,
    build_filtered_kinetic_phase,
    build_kinetic_mpo,
    build_kinetic_phase,
    build_lowpass,
    build_potential_diagonal,
    build_potential_mpo,
    build_qft_mpo,
    calibrate_kcut,
    kinetic_factors,
)
from qttgp.quantics import QuanticsGrid
from qttgp.solver import gaussian_state
from qttgp.tci import GridFunction, default_seeds, tci_compress


def bitrev(R):
    m = np.arange(2**R)
    return np.array([int(format(v, f"0{R}b")[::-1], 2) for v in m])


def dft(R):
    L = 2**R
    k = np.arange(L)
    return np.exp(-2j * np.pi * np.outer(k, k) / L) / np.sqrt(L)


def momentum_bits(grid, k):
    return grid.momentum_view().bits_array(np.asarray(k).reshape(-1, grid.dim))


def dense_kinetic(grid, spec):
    L = grid.L
    k = np.arange(L)
    h = 2 / (spec.mass * grid.h_r**2) * np.sin(np.pi * k / L) ** 2
    kt = np.minimum(k, L - k)
    theta = 1 / (np.exp((kt - spec.k_cut) * spec.beta) + 1)
    F = dft(grid.R)
    return F.conj().T @ np.diag(theta * np.exp(-1j * h * spec.h_t)) @ F


# ---------------------------------------------------------------- QFT


@pytest.mark.parametrize("R", range(1, 11))
def test_qft_matches_dft(R):
    M = ttm.to_dense(build_qft_mpo(R))
    assert np.abs(M[bitrev(R)] - dft(R)).max() < 1e-12


def test_qft_one_site():
    np.testing.assert_allclose(ttm.to_dense(build_qft_mpo(1)), np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-15)


def test_qft_of_constant_is_delta():
    out = ttm.apply_naive(build_qft_mpo(8), ttm.constant(8, 2**-4))
    v = ttm.to_dense(out)
    assert abs(v[0] - 1) < 1e-10
    assert np.abs(v[1:]).max() < 1e-10


def test_qft_inverse_round_trip():
    fwd, inv = build_qft_mpo(8), build_qft_mpo(8, inverse=True)
    for seed in range(20):
        t = ttm.random_tt(8, 4, seed)
        back = ttm.apply_naive(inv, ttm.apply_naive(fwd, t))
        assert np.abs(ttm.to_dense(back) - ttm.to_dense(t)).max() < 1e-10
    prod = ttm.to_dense(ttm.mpo_multiply(inv, fwd))
    assert np.abs(prod - np.eye(256)).max() < 1e-8


@given(st.integers(1, 12), st.integers(0, 10**6))
def test_qft_unitary(R, seed):
    F = build_qft_mpo(R)
    a, b = ttm.random_tt(R, 3, seed), ttm.random_tt(R, 3, seed + 1)
    lhs = ttm.inner(ttm.apply_naive(F, a), ttm.apply_naive(F, b))
    assert abs(lhs - ttm.inner(a, b)) < 1e-10


def test_qft_dims_acts_on_one_axis():
    grid = QuanticsGrid(2, 3, 1.0)
    M = ttm.to_dense(build_qft_mpo(grid=grid, dims=[0]))
    v = np.random.default_rng(0).standard_normal((8, 8))
    out = grid.to_natural(M @ grid.from_natural(v))
    ref = dft(3) @ v
    np.testing.assert_allclose(out[bitrev(3)], ref, atol=1e-12)


# ---------------------------------------------------------------- kinetic phase


def test_kinetic_phase_zero_momentum():
    grid = QuanticsGrid(1, 10, 10.0)
    t = build_kinetic_phase(grid, KineticSpec(h_t=0.01))
    assert ttm.evaluate_batch(t, momentum_bits(grid, [0]))[0] == pytest.approx(1.0, abs=1e-10)


def test_kinetic_phase_formula_tiny_grid():
    grid = QuanticsGrid(1, 2, 1.0)
    t = build_kinetic_phase(grid, KineticSpec(h_t=0.05, k_cut=2))
    val = ttm.evaluate_batch(t, momentum_bits(grid, [1]))[0]
    assert val == pytest.approx(np.exp(-4j * 0.05), abs=1e-10)


def test_kinetic_phase_symmetric_and_unimodular():
    grid = QuanticsGrid(1, 12, 10.0)
    t = build_kinetic_phase(grid, KineticSpec(h_t=0.01))
    k = np.random.default_rng(3).integers(1, grid.L, 100)
    a = ttm.evaluate_batch(t, momentum_bits(grid, k))
    b = ttm.evaluate_batch(t, momentum_bits(grid, grid.L - k))
    assert np.abs(a - b).max() < 1e-10
    assert np.abs(np.abs(a) - 1).max() < 1e-12 * 100


def test_kinetic_phase_matches_formula():
    grid = QuanticsGrid(1, 16, 50.0)
    t = build_kinetic_phase(grid, KineticSpec(h_t=0.01))
    k = np.random.default_rng(4).integers(0, grid.L, 500)
    ref = np.exp(-1j * 2 / grid.h_r**2 * np.sin(np.pi * k / grid.L) ** 2 * 0.01)
    assert np.abs(ttm.evaluate_batch(t, momentum_bits(grid, k)) - ref).max() < 1e-10


# ---------------------------------------------------------------- low-pass


def test_lowpass_values():
    grid = QuanticsGrid(1, 12, 10.0)
    t = build_lowpass(grid, KineticSpec(h_t=0.01, k_cut=256, beta=2.0))
    k = np.arange(grid.L)
    vals = ttm.evaluate_batch(t, momentum_bits(grid, k)).real
    kt = np.minimum(k, grid.L - k)
    assert vals[0] == pytest.approx(1 / (np.exp(-512) + 1), abs=1e-10)
    assert vals[256] == pytest.approx(0.5, abs=1e-10)
    assert vals[grid.L - 256] == pytest.approx(0.5, abs=1e-10)
    assert np.all(vals[kt <= 256 - 8] >= 1 - 1e-6)
    assert np.all(np.abs(vals[kt >= 256 + 8]) <= 1e-6)
    assert np.all(vals > -1e-10) and np.all(vals <= 1 + 1e-10)


def test_lowpass_separable_2d():
    grid = QuanticsGrid(2, 8, 10.0)
    spec = KineticSpec(h_t=0.01, k_cut=64)
    t2 = build_lowpass(grid, spec)
    t1 = build_lowpass(grid.axis_grid(), spec)
    k = np.random.default_rng(1).integers(0, grid.L, (100, 2))
    v2 = ttm.evaluate_batch(t2, momentum_bits(grid, k))
    ax = grid.axis_grid()
    vx = ttm.evaluate_batch(t1, momentum_bits(ax, k[:, 0]))
    vy = ttm.evaluate_batch(t1, momentum_bits(ax, k[:, 1]))
    assert np.abs(v2 - vx * vy).max() < 1e-10


def test_spec_validation():
    with pytest.raises(ValueError):
        KineticSpec(h_t=0.01, beta=0)
    with pytest.raises(ValueError):
        KineticSpec(h_t=0.01, k_cut=0)
    with pytest.raises(ValueError):
        build_lowpass(QuanticsGrid(1, 6, 1.0), KineticSpec(h_t=0.01, k_cut=64))


# ---------------------------------------------------------------- kinetic MPO


def test_kinetic_mpo_dense_r8():
    grid = QuanticsGrid(1, 8, 10.0)
    spec = KineticSpec(h_t=0.01, k_cut=64)
    M = ttm.to_dense(build_kinetic_mpo(grid, spec))
    assert np.abs(M - dense_kinetic(grid, spec)).max() < 1e-8


def test_kinetic_mpo_2d_factors_dense():
    grid = QuanticsGrid(2, 5, 4.0)
    spec = KineticSpec(h_t=0.02, k_cut=8)
    ops = kinetic_factors(grid, spec)
    v = np.random.default_rng(2).standard_normal((32, 32)) + 0j
    t = ttm.from_dense(grid.from_natural(v))
    for op in ops:
        t = ttm.apply_naive(op, t)
    K = dense_kinetic(grid.axis_grid(), spec)
    ref = K @ v @ K.T
    assert np.abs(grid.to_natural(ttm.to_dense(t)) - ref).max() < 1e-8


def test_kinetic_mpo_forward_backward_on_passband():
    grid = QuanticsGrid(1, 12, 20.0)
    spec = KineticSpec(h_t=0.01)
    psi = gaussian_state(grid, width=1.0)
    fwd = build_kinetic_mpo(grid, spec)
    bwd = build_kinetic_mpo(grid, KineticSpec(h_t=-0.01))
    out = ttm.apply_naive(bwd, ttm.apply_naive(fwd, psi))
    assert np.abs(ttm.to_dense(out) - ttm.to_dense(psi)).max() < 1e-8


def test_kinetic_mpo_bond_cap():
    with pytest.raises(KineticBuildError):
        build_kinetic_mpo(QuanticsGrid(1, 10, 10.0), KineticSpec(h_t=0.01), max_bond=2)


def test_passband_norm_conservation():
    grid = QuanticsGrid(1, 10, 10.0)
    psi = gaussian_state(grid)
    out = ttm.apply_naive(build_kinetic_mpo(grid, KineticSpec(h_t=0.01)), psi)
    assert abs(ttm.norm(out) - 1) < 1e-10


def test_filtered_phase_is_product():
    grid = QuanticsGrid(1, 11, 10.0)
    spec = KineticSpec(h_t=0.01)
    f = build_filtered_kinetic_phase(grid, spec)
    prod = ttm.hadamard_apply(build_lowpass(grid, spec), build_kinetic_phase(grid, spec))
    k = np.random.default_rng(0).integers(0, grid.L, 300)
    bits = momentum_bits(grid, k)
    assert np.abs(ttm.evaluate_batch(f, bits) - ttm.evaluate_batch(prod, bits)).max() < 1e-9


# ---------------------------------------------------------------- calibration


def test_calibration_wide_gaussian():
    grid = QuanticsGrid(1, 20, 100.0)
    assert calibrate_kcut(grid, KineticSpec(h_t=0.01), gaussian_state(grid)) == 256


def test_calibration_boosted_gaussian():
    grid = QuanticsGrid(1, 20, 100.0)
    assert calibrate_kcut(grid, KineticSpec(h_t=0.01), gaussian_state(grid, k=5.0)) == 256


def test_calibration_rejects_delta():
    grid = QuanticsGrid(1, 8, 10.0)
    delta = ttm.product_state([[1, 0]] * 8)
    with pytest.raises(CalibrationError):
        calibrate_kcut(grid, KineticSpec(h_t=0.01), delta)


# ---------------------------------------------------------------- potentials


def test_zero_amplitude_is_identity():
    op = build_potential_mpo(QuanticsGrid(1, 8, 1.0), PotentialTerm("harmonic_x", 0.0), 0.01)
    assert op.max_bond == 1
    np.testing.assert_allclose(ttm.to_dense(op), np.eye(256), atol=0)


def test_harmonic_dense_r8():
    grid = QuanticsGrid(1, 8, 10.0)
    op = ttm.to_dense(build_potential_mpo(grid, PotentialTerm("harmonic_x", 1.0), 0.01))
    x = grid.axes()[0]
    np.testing.assert_allclose(np.diag(op), np.exp(-1j * (x / 10) ** 2 * 0.01), atol=1e-9)


@pytest.mark.parametrize(
    "grid,term",
    [
        (QuanticsGrid(1, 6, 5.0), PotentialTerm("sine_mod", 3.0, (2.0,))),
        (QuanticsGrid(2, 3, 5.0), PotentialTerm("cross_xy", 2.0)),
        (QuanticsGrid(2, 3, 5.0), PotentialTerm("harmonic_y", 2.0)),
        (QuanticsGrid(2, 3, 5.0), PotentialTerm("sine_mod", 1.0, (1.0, 2.0))),
    ],
)
def test_potential_operators_are_diagonal(grid, term):
    M = ttm.to_dense(build_potential_mpo(grid, term, 0.1))
    assert np.abs(M - np.diag(np.diag(M))).max() < 1e-12
    nat = grid.to_natural(np.diag(M))
    axes = np.meshgrid(*grid.axes(), indexing="ij")
    assert np.abs(nat - np.exp(-1j * term(grid.W, *axes) * 0.1)).max() < 1e-9


def test_split_potential_equals_summed_r26():
    grid = QuanticsGrid(1, 26, 200.0)
    h = 0.01
    t1, t2 = PotentialTerm("harmonic_x", 400.0), PotentialTerm("sine_mod", 10.0, (1e4,))
    psi = gaussian_state(grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PotentialWarning)
        d1 = build_potential_diagonal(grid, t1, h)
        d2 = build_potential_diagonal(grid, t2, h)
    pol = ttm.TruncationPolicy(None, 1e-12)
    split = ttm.hadamard_apply(d2, ttm.hadamard_apply(d1, psi, pol), pol)
    both = GridFunction(grid, lambda x: np.exp(-1j * (t1(200.0, x) + t2(200.0, x)) * h))
    summed = ttm.hadamard_apply(tci_compress(both, tol=1e-10, seeds=default_seeds(grid)), psi, pol)
    idx = np.concatenate(
        [np.random.default_rng(0).integers(0, 2, (500, 26), dtype=np.int8),
         grid.bits_array(grid.nearest_index(np.random.default_rng(1).normal(0, 1, (500, 1))))]
    )
    a, b = ttm.evaluate_batch(split, idx), ttm.evaluate_batch(summed, idx)
    scale = np.abs(ttm.evaluate_batch(psi, idx)).max()
    assert np.abs(a - b).max() < 1e-7 * scale


def test_large_phase_warns():
    with pytest.warns(PotentialWarning):
        build_potential_diagonal(QuanticsGrid(1, 8, 10.0), PotentialTerm("sine_mod", 10.0, (1.0,)), 1.0)


def test_potential_term_validation():
    with pytest.raises(ValueError):
        PotentialTerm("quartic", 1.0)
    with pytest.raises(ValueError):
        PotentialTerm("harmonic_x", float("nan"))
    with pytest.raises(ValueError):
        PotentialTerm("sine_mod", 1.0, (0.0,))
    with pytest.raises(ValueError):
        PotentialTerm("harmonic_y", 1.0)(1.0, np.zeros(3))
