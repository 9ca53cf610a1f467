import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgslab.frequency_tools import SpaceTimeField, free_wave, random_annular_data, time_window
from kgslab.function_norms import (
    Atom,
    AtomicDecomposition,
    RegularityParams,
    build_atom,
    mixed_norm,
    p_variation,
    p_variation_exhaustive,
    sobolev_norm,
    v2_norm,
    xsb_norm,
    z_norm_upper,
)
from kgslab.radial_spectral import FrequencyField, RadialField, inverse_transform, l2_norm, lq_norm, make_grid

GRID = make_grid(32.0, 256)


def rand_field(rng, grid=GRID):
    return RadialField(grid, rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points))


def random_atom(rng, times, K, flow="schrodinger", k=1):
    jumps = np.sort(rng.choice(times[1:-1], size=K - 1, replace=False))
    pieces = [RadialField(GRID, np.zeros(GRID.n_points))]
    pieces += [random_annular_data(GRID, k, int(rng.integers(2**31))) * rng.uniform(0.1, 1) for _ in range(K - 1)]
    return build_atom(jumps, pieces, flow, times)


# ----------------------------------------------------------------- mixed norms

def test_mixed_norm_examples():
    times = np.linspace(0, 4, 65)
    zero = SpaceTimeField(GRID, times, np.zeros((65, GRID.n_points)))
    assert mixed_norm(zero, 2, 3) == 0
    f = rand_field(np.random.default_rng(0))
    const = SpaceTimeField(GRID, times, np.tile(f.values, (65, 1)))
    # rectangle rule over 65 samples of width dt covers 65 * dt
    span = 65 * const.dt
    for p, q in ((2, 2), (4, 3), (1, 6)):
        assert mixed_norm(const, p, q) == pytest.approx(span ** (1 / p) * lq_norm(f, q), rel=1e-12)
    assert mixed_norm(const, np.inf, 2) == pytest.approx(lq_norm(f, 2), rel=1e-12)
    with pytest.raises(ValueError):
        mixed_norm(const, 0.5, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_holder(seed):
    rng = np.random.default_rng(seed)
    times = np.linspace(0, 1, 9)
    F = SpaceTimeField(GRID, times, rng.standard_normal((9, GRID.n_points)))
    G = SpaceTimeField(GRID, times, rng.standard_normal((9, GRID.n_points)) * 1j)
    FG = SpaceTimeField(GRID, times, F.values * G.values)
    assert mixed_norm(FG, 1, 1) <= mixed_norm(F, 2, 2) * mixed_norm(G, 2, 2) + 1e-10


# ------------------------------------------------------------------- sobolev

def test_sobolev_examples():
    rng = np.random.default_rng(1)
    f = rand_field(rng)
    assert sobolev_norm(f, 0) == pytest.approx(l2_norm(f), rel=1e-12)
    g = make_grid(np.pi, 64)  # dual nodes are the integers
    e = np.zeros(g.n_points, dtype=complex)
    e[0] = 1 / np.sqrt(g.dual_weights[0])
    assert sobolev_norm(FrequencyField(g, e), 0) == pytest.approx(1.0, rel=1e-14)
    assert sobolev_norm(inverse_transform(FrequencyField(g, e)), 1) == pytest.approx(np.sqrt(2), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(0, 3))
def test_sobolev_monotone(seed, s, gap):
    f = rand_field(np.random.default_rng(seed))
    assert sobolev_norm(f, s) <= sobolev_norm(f, s + gap) * (1 + 1e-12)


# ------------------------------------------------------------------ xsb norm

def windowed(F):
    w = time_window(F.times)
    return SpaceTimeField(F.grid, F.times, F.values * w[:, None], w)


def test_xsb_zero_and_projection_bound():
    times = np.linspace(-8, 8, 128, endpoint=False)
    zero = SpaceTimeField(GRID, times, np.zeros((128, GRID.n_points)), time_window(times))
    assert xsb_norm(zero, 0.5, "schrodinger").value == 0
    F = windowed(SpaceTimeField(GRID, times, np.random.default_rng(2).standard_normal((128, GRID.n_points))))
    res = xsb_norm(F, 0.0, "kg+")
    assert res.value <= F.l2() * (1 + 1e-10)
    assert res.j_min < res.j_max


def test_xsb_free_wave_lowest_band():
    times = np.linspace(-8, 8, 256, endpoint=False)
    F = free_wave(random_annular_data(GRID, 1, 3, radius=4.0), "schrodinger", times, window=True)
    res = xsb_norm(F, 0.5, "schrodinger")
    top = max(range(res.j_min, res.j_max + 1), key=lambda j: 2 ** (0.5 * j) * res.bands[j])
    assert top <= res.j_min + 1
    # window oracle: the lowest band carries at most the whole field
    assert res.value <= 2 * 2 ** (0.5 * top) * F.l2()


def test_xsb_stable_under_refinement():
    vals = []
    for n_t in (128, 256):
        times = np.linspace(-8, 8, n_t, endpoint=False)
        jumps = [times[n_t // 4], times[n_t // 2]]
        pieces = [RadialField(GRID, np.zeros(GRID.n_points))]
        pieces += [random_annular_data(GRID, 0, 5), random_annular_data(GRID, 0, 6)]
        F, _ = build_atom(jumps, pieces, "schrodinger", times)
        vals.append(xsb_norm(windowed(F), 0.5, "schrodinger").value)
    assert np.isfinite(vals).all()
    assert abs(vals[1] / vals[0] - 1) <= 0.05


# --------------------------------------------------------------- p-variation

def test_p_variation_examples():
    u = rand_field(np.random.default_rng(5))
    u = u * (1 / l2_norm(u))
    assert p_variation([u] * 5) == 0
    zero = u * 0
    assert p_variation([zero, u, zero]) == pytest.approx(np.sqrt(2), rel=1e-12)
    assert p_variation_exhaustive(np.array([0.0, 1.0, 0.0])) == pytest.approx(np.sqrt(2), rel=1e-15)
    step = [zero] * 4 + [u * 3.0] * 5
    assert p_variation(step) == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(ValueError):
        p_variation([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=1, max_size=10), st.sampled_from([1.0, 2.0, 3.0]))
def test_dp_matches_exhaustive_integers(seq, p):
    rows = np.array(seq, dtype=float)[:, None]
    g = make_grid(np.pi, 1, min_points=1)
    scale = np.sqrt(g.space_weights[0])
    assert p_variation(rows, p, grid=g) / scale == pytest.approx(p_variation_exhaustive(rows, p), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12))
def test_dp_matches_exhaustive_vectors(seed, n):
    rng = np.random.default_rng(seed)
    g = make_grid(np.pi, 4, min_points=1)
    rows = rng.standard_normal((n, 4)) + 1j * rng.standard_normal((n, 4))
    scaled = rows * np.sqrt(g.space_weights)
    assert p_variation(rows, 2.0, grid=g) == pytest.approx(p_variation_exhaustive(scaled, 2.0), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_dp_dominates_random_partitions(seed):
    # random restarts: no sampled sub-partition beats the dynamic program
    rng = np.random.default_rng(seed)
    g = make_grid(np.pi, 3, min_points=1)
    rows = rng.standard_normal((30, 3))
    best = p_variation(rows, 2.0, grid=g)
    y = rows * np.sqrt(g.space_weights)
    for _ in range(50):
        idx = np.sort(rng.choice(30, size=int(rng.integers(2, 30)), replace=False))
        total = np.sqrt(np.sum(np.linalg.norm(np.diff(y[idx], axis=0), axis=1) ** 2))
        assert total <= best * (1 + 1e-12)


# ---------------------------------------------------------------------- atoms

def test_free_wave_has_zero_v2():
    times = np.linspace(0, 4, 33)
    F = free_wave(random_annular_data(GRID, 1, 0), "kg-", times)
    assert v2_norm(F, "kg-") <= 1e-12


def test_single_jump_atom():
    times = np.linspace(0, 4, 33)
    phi = random_annular_data(GRID, 1, 0)
    F, dec = build_atom([times[10]], [phi * 0, phi * 5.0], "schrodinger", times)
    assert v2_norm(F, "schrodinger") == pytest.approx(1.0, rel=1e-12)
    assert dec.atoms[0].mass == pytest.approx(1.0, abs=1e-12)
    assert dec.u2_upper == 1.0
    assert np.all(F.values[:10] == 0)
    after = free_wave(phi, "schrodinger", times[10:])
    assert np.allclose(F.values[10:], after.values, atol=1e-12)


def test_atom_validation():
    times = np.linspace(0, 4, 33)
    phi = random_annular_data(GRID, 1, 0)
    with pytest.raises(ValueError):
        build_atom([times[3]], [phi * 0, phi * 0], "schrodinger", times)
    with pytest.raises(ValueError):
        build_atom([0.123456], [phi * 0, phi], "schrodinger", times)
    with pytest.raises(ValueError):
        Atom((1.0,), (phi, phi))
    with pytest.raises(ValueError):
        Atom((2.0, 1.0), (phi * 0, phi, phi))
    with pytest.raises(ValueError):
        AtomicDecomposition("schrodinger", (Atom((1.0,), (phi * 0, phi * 2)),), (1.0,))


def test_random_atoms_bounded():
    rng = np.random.default_rng(7)
    times = np.linspace(0, 8, 65)
    for trial in range(100):
        K = int(rng.integers(2, 17))
        flow = ("schrodinger", "kg+", "kg-")[trial % 3]
        F, dec = random_atom(rng, times, K, flow)
        v = v2_norm(F, flow)
        assert v <= 2.0
        assert v <= 2.0 * dec.u2_upper
        assert sum(l2_norm(p) ** 2 for p in dec.atoms[0].pieces) == pytest.approx(1.0, abs=1e-12)


def test_conjugation_covariance():
    rng = np.random.default_rng(8)
    times = np.linspace(0, 8, 65)
    for flow, conj in (("kg+", "kg-"), ("kg-", "kg+")):
        F, _ = random_atom(rng, times, 5, flow)
        assert v2_norm(F.conj(), conj) == pytest.approx(v2_norm(F, flow), rel=1e-12)


def test_z_norm_examples():
    times = np.linspace(0, 4, 33)
    phi = random_annular_data(GRID, 0, 0)
    _, dec = build_atom([times[5]], [phi * 0, phi], "schrodinger", times)
    assert z_norm_upper({0: dec}, 3.7) == pytest.approx(1.0)
    assert z_norm_upper({0: dec, 1: dec}, 1.0) == pytest.approx(np.sqrt(5))
    assert z_norm_upper({-12: dec, 0: dec}, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        z_norm_upper({}, 0)


def test_regularity_params():
    RegularityParams(0, 0.2, 0.1, 1e-3)
    for bad in (dict(s=-1, r=0), dict(s=0, r=-0.6), dict(s=0, r=2), dict(s=0, r=0, epsilon=0.3),
                dict(s=0, r=0, delta=0)):
        with pytest.raises(ValueError):
            RegularityParams(**bad)
