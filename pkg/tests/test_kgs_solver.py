import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgslab.frequency_tools import BesselPower, apply_multiplier, bracket, free_wave
from kgslab.kgs_solver import (
    KGSState,
    SecondOrderData,
    Trajectory,
    from_first_order,
    gaussian_data,
    picard_iterate,
    pullback,
    residual,
    scattering_diagnostic,
    solve,
    step,
    to_first_order,
)
from kgslab.radial_spectral import FrequencyField, RadialField, forward_values, inverse_transform, l2_norm, make_grid

GRID = make_grid(32.0, 256)
MODE_GRID = make_grid(np.pi, 64)  # dual nodes 1, 2, 3, ...


def real_field(grid, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(grid.n_points) * np.exp(-grid.dual**2 / 2)
    return inverse_transform(FrequencyField(grid, c))


def zero(grid=GRID):
    return RadialField(grid, np.zeros(grid.n_points, dtype=complex))


def data(delta=0.01, grid=GRID):
    return gaussian_data(grid, delta), gaussian_data(grid, delta, width=3.0, phase=0.7)


def rel(a, b):
    return l2_norm(a - b) / l2_norm(b)


# -------------------------------------------------------------- reformulation

def test_first_order_examples():
    n0 = real_field(GRID, 1)
    N0 = to_first_order(SecondOrderData(n0, zero()))
    assert np.allclose(N0.values, n0.values, atol=1e-15)
    e = np.zeros(MODE_GRID.n_points)
    e[0] = 1.0
    mode = inverse_transform(FrequencyField(MODE_GRID, e))
    N0 = to_first_order(SecondOrderData(zero(MODE_GRID), mode))
    assert np.allclose(forward_values(N0.values, MODE_GRID), -1j * e / np.sqrt(2), atol=1e-13)


def test_from_first_order_examples():
    f = real_field(GRID, 2)
    d = from_first_order(f)
    assert np.max(np.abs(d.n1.values)) <= 1e-14 * np.max(np.abs(f.values)) + 1e-300
    d = from_first_order(RadialField(GRID, 1j * f.values))
    assert np.max(np.abs(d.n0.values)) == 0
    expect = -apply_multiplier(f, BesselPower(1)).values
    assert np.allclose(d.n1.values, expect, atol=1e-12)


def test_second_order_rejects_complex():
    f = real_field(GRID, 3)
    with pytest.raises(ValueError):
        SecondOrderData(RadialField(GRID, f.values * (1 + 1e-6j)), f)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_reformulation_roundtrip(seed):
    n0, n1 = real_field(GRID, seed), real_field(GRID, seed + 1)
    back = from_first_order(to_first_order(SecondOrderData(n0, n1)))
    assert rel(back.n0, n0) <= 1e-12
    assert rel(back.n1, n1) <= 1e-12
    N = RadialField(GRID, n0.values + 1j * n1.values)
    assert rel(to_first_order(from_first_order(N)), N) <= 1e-12


# ------------------------------------------------------------------- stepping

@pytest.mark.parametrize("method", ["strang_split", "exponential_rk2"])
def test_zero_data_stays_zero(method):
    traj = solve(zero(), zero(), 1.0, 1 / 16, method)
    assert np.all(traj.u_coeffs == 0) and np.all(traj.N_coeffs == 0)


@pytest.mark.parametrize("method", ["strang_split", "exponential_rk2"])
def test_linear_regime_matches_free_wave(method):
    u0, N0 = data(0.5)
    traj = solve(u0, N0, 2.0, 1 / 32, method, coupling=0.0, save_every=16)
    free = free_wave(u0, "schrodinger", traj.times)
    freeN = free_wave(N0, "kg+", traj.times)
    for i, s in enumerate(traj.states):
        assert np.max(np.abs(s.u.values - free.values[i])) <= 1e-10
        assert np.max(np.abs(s.N.values - freeN.values[i])) <= 1e-10


def test_linear_core_reversible():
    u0, N0 = data(1.0)
    fwd = solve(u0, N0, 1.0, 1 / 16, coupling=0.0).final
    back = solve(fwd.u, fwd.N, -1.0, -1 / 16, coupling=0.0).final
    assert rel(back.u, u0) <= 1e-10 and rel(back.N, N0) <= 1e-10


def test_first_step_meson_bound():
    u0 = gaussian_data(GRID, 0.01)
    dt = 1 / 64
    s = step(KGSState(u0, zero()), dt)
    bound = dt * l2_norm(apply_multiplier(RadialField(GRID, np.abs(u0.values) ** 2), BesselPower(-1)))
    assert l2_norm(s.N) <= bound * (1 + 2 * dt)
    assert s.t == dt


def test_step_matches_solve():
    u0, N0 = data(0.1)
    s = step(KGSState(u0, N0), 1 / 32, "exponential_rk2")
    traj = solve(u0, N0, 1 / 32, 1 / 32, "exponential_rk2")
    assert np.allclose(s.u.values, traj.final.u.values, atol=1e-15)


def test_mass_conserved_short_run():
    u0, N0 = data(0.01)
    traj = solve(u0, N0, 2.0, 1 / 256, save_every=64)
    assert traj.mass_drift <= 1e-12
    assert traj.aborted is None


@pytest.mark.parametrize("method", ["strang_split", "exponential_rk2"])
def test_order_two_self_convergence(method):
    u0, N0 = data(0.5)
    finals = [solve(u0, N0, 0.5, 1 / 2**j, method, save_every=2**j).final for j in (3, 4, 5)]
    e1 = l2_norm(finals[0].u - finals[1].u) + l2_norm(finals[0].N - finals[1].N)
    e2 = l2_norm(finals[1].u - finals[2].u) + l2_norm(finals[1].N - finals[2].N)
    assert 3 <= e1 / e2 <= 5


def test_gauge_covariance():
    u0, N0 = data(0.1)
    theta = 1.1
    a = solve(u0, N0, 1.0, 1 / 32, save_every=32).final
    b = solve(u0 * np.exp(1j * theta), N0, 1.0, 1 / 32, save_every=32).final
    assert np.max(np.abs(b.u.values - np.exp(1j * theta) * a.u.values)) <= 1e-11 * np.max(np.abs(a.u.values))
    assert np.max(np.abs(b.N.values - a.N.values)) <= 1e-11 * np.max(np.abs(a.N.values))


def test_meson_stays_real_discretely():
    # d_t Re N + <D> Im N = 0, so the centred difference error falls by ~4 per dt halving
    u0, N0 = data(0.5)
    errs = []
    for dt in (1 / 16, 1 / 32):
        traj = solve(u0, N0, 0.5, dt)
        n = forward_values(np.real(np.array([s.N.values for s in traj.states])), GRID)
        m = forward_values(np.imag(np.array([s.N.values for s in traj.states])), GRID)
        mismatch = (n[2:] - n[:-2]) / (2 * dt) + bracket(GRID.dual) * m[1:-1]
        w = GRID.dual_weights / bracket(GRID.dual) ** 2
        errs.append(np.max(np.sqrt(np.sum(np.abs(mismatch) ** 2 * w, axis=-1))))
    assert 3 <= errs[0] / errs[1] <= 5


def test_solve_validation():
    u0, N0 = data()
    with pytest.raises(ValueError):
        solve(u0, N0, 1.0, 0.3)
    with pytest.raises(ValueError):
        solve(u0, N0, 1.0, 1 / 8, method="euler")
    with pytest.raises(ValueError):
        solve(u0, N0, 1.0, 1 / 8, save_every=0)
    with pytest.raises(ValueError):
        step(KGSState(u0, N0), 0.1, "euler")
    with pytest.raises(ValueError):
        solve(u0, N0, 1.0, 1 / 8, kg_sign=0)


def test_reflectivity_abort_keeps_partial_trajectory():
    g = make_grid(8.0, 128)
    wide = gaussian_data(g, 0.1, width=6.0)
    traj = solve(wide, zero(g), 1.0, 1 / 16)
    assert traj.aborted is not None and "reflectivity" in traj.aborted
    assert len(traj) >= 2


# ------------------------------------------------------------------ residual

def test_residual_free_flow():
    u0, N0 = data(1.0)
    traj = solve(u0, N0, 2.0, 1 / 32, coupling=0.0)
    assert residual(traj) <= 1e-8


def test_residual_refinement_and_corruption():
    u0, N0 = data(0.5)
    r = [residual(solve(u0, N0, 1.0, dt)) for dt in (1 / 16, 1 / 32)]
    assert 3 <= r[0] / r[1] <= 5
    traj = solve(u0, N0, 1.0, 1 / 32)
    traj.u_coeffs[10] = 0
    assert residual(traj) >= 1.0
    with pytest.raises(ValueError):
        residual(Trajectory(GRID, traj.times[:2], traj.u_coeffs[:2], traj.N_coeffs[:2], 1 / 32, "x"))


# ------------------------------------------------------------------- Picard

def test_picard_zeroth_iterate_is_free():
    u0, N0 = data(0.01)
    res = picard_iterate(u0, N0, 1.0, 1 / 16, m_iters=2)
    free = free_wave(u0, "schrodinger", res.iterates[0].times)
    assert np.allclose(res.iterates[0].state(8).u.values, free.values[8], atol=1e-14)
    assert len(res.iterates) == 3


def test_picard_linear_is_fixed_point():
    u0, N0 = data(0.5)
    res = picard_iterate(u0, N0, 1.0, 1 / 16, m_iters=3, coupling=0.0)
    assert max(res.differences) <= 1e-13  # stepwise phases vs closed-form phases


def test_picard_contracts_and_matches_solver():
    u0, N0 = data(0.01)
    res = picard_iterate(u0, N0, 1.0, 1 / 32, m_iters=4)
    assert res.contractive and max(res.ratios) <= 0.5
    gaps = []
    for dt in (1 / 16, 1 / 32):
        p = picard_iterate(u0, N0, 1.0, dt, m_iters=4).iterates[-1].final
        s = solve(u0, N0, 1.0, dt).final
        gaps.append(l2_norm(p.u - s.u) + l2_norm(p.N - s.N))
    assert gaps[1] < gaps[0]


# ----------------------------------------------------------------- scattering

def test_linear_scattering_increments_vanish():
    u0, N0 = data(0.5)
    traj = solve(u0, N0, 8.0, 1 / 16, coupling=0.0, save_every=8)
    rep = scattering_diagnostic(traj, start=1.0)
    assert len(rep.pairs) == 3
    assert max(rep.u_increments) <= 1e-12 and rep.correction <= 1e-12
    assert not rep.monotone  # zero increments are not strictly decreasing
    W, M = pullback(traj)
    assert np.allclose(W, W[0], atol=1e-14)


def test_scattering_rejects_unsaved_times():
    u0, N0 = data(0.01)
    traj = solve(u0, N0, 8.0, 1 / 16, save_every=48)
    with pytest.raises(ValueError):
        scattering_diagnostic(traj, start=1.0)
