import itertools
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from kgslab.estimate_harness import (
    BILINEAR_CASES,
    DEFAULT_TRANSVERSALITY,
    INF,
    INCOMPATIBLE_LIMIT,
    REFERENCE_SCHRODINGER,
    REFERENCE_WAVE,
    LebesguePair,
    ProbeSettings,
    Scene,
    Wave,
    _convolution_compatible,
    _higher_derivative_sup,
    admissible,
    bilinear_coefficient,
    bilinear_ratio,
    fit_slope,
    kg_pairing,
    lemma_sum,
    schrodinger_pairing,
    sigma,
    spread,
    strichartz_ratio,
    strichartz_sweep,
    summation_check,
    swept_triples,
    transversality,
    transversality_sweep,
    trilinear_coefficient,
    trilinear_kg,
    trilinear_schrodinger,
    trilinear_sum,
)


# ------------------------------------------------------------- Lebesgue pairs

@pytest.mark.parametrize("p,q,value", [
    (INF, 2, 0), (4, 4, Fraction(-1, 4)), (Fraction(8, 3), 3, Fraction(1, 4)), (2, 6, 0),
    (2, 5, Fraction(1, 10)), (2, 4, Fraction(1, 4)), (2, Fraction(10, 3), Fraction(2, 5)),
])
def test_sigma_schrodinger_table(p, q, value):
    assert sigma(LebesguePair(p, q, "schrodinger")) == value


@pytest.mark.parametrize("p,q,value", [(INF, 2, 0), (4, 4, Fraction(-1, 2)), (Fraction(8, 3), 3, Fraction(-1, 8))])
def test_sigma_wave_table(p, q, value):
    assert sigma(LebesguePair(p, q, "wave")) == value


def test_admissibility():
    assert admissible(LebesguePair(2, Fraction(10, 3)))[0] is False
    assert admissible(LebesguePair(2, 4, "wave"))[0] is False
    assert admissible(LebesguePair(2, 4, "schrodinger"))[0] is True
    assert admissible(LebesguePair(INF, 2))[0] is True
    assert admissible(LebesguePair(2, 3))[0] is False
    assert admissible(LebesguePair(3, 2, "wave"))[0] is False
    assert admissible(LebesguePair(3, 3, "wave"))[0] is True
    # the (8/3, 3) wave row lies outside 1/p + 2/q <= 1
    assert [admissible(LebesguePair(p, q, "wave"))[0] for p, q in REFERENCE_WAVE] == [True, True, False]
    assert sum(admissible(LebesguePair(p, q))[0] for p, q in REFERENCE_SCHRODINGER) == 6


def test_pair_parsing():
    pair = LebesguePair("8/3", "inf", "wave")
    assert pair.p == Fraction(8, 3) and pair.q == INF and pair.label == "(8/3,inf)"
    assert LebesguePair(2.5, 4).p == Fraction(5, 2)
    with pytest.raises(ValueError):
        LebesguePair(1, 2)
    with pytest.raises(ValueError):
        LebesguePair(2, 2, "heat")


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50))
def test_sigma_matches_scaling_formula(a, b):
    # sigma is the unique exponent making the estimate scale-invariant: lead/p + 3/q - 3/2
    p, q = Fraction(2) + Fraction(a, 7), Fraction(2) + Fraction(b, 11)
    assert sigma(LebesguePair(p, q)) == 2 / p + 3 / q - Fraction(3, 2)
    assert sigma(LebesguePair(p, q, "wave")) == 1 / p + 3 / q - Fraction(3, 2)


# ------------------------------------------------------------------ helpers

def test_fit_slope_and_spread():
    x = np.array([0, 1, 2, 3])
    assert fit_slope(x, 2.0 ** (0.5 * x)) == pytest.approx(0.5)
    assert spread([1, 4, 2]) == 4
    assert spread([0, 1]) == INF


def test_scene_geometry_and_determinism():
    scene = Scene([Wave("kg+", 0), Wave("schrodinger", 1)])
    assert scene.times.size == 257
    assert scene.times[128] == 0
    assert scene.window.max() == 1 and scene.window[0] == 0
    a, _ = scene.sample(1, 5, "x")
    b, _ = scene.sample(1, 5, "x")
    c, _ = scene.sample(1, 6, "x")
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# ----------------------------------------------------------------- Strichartz

@pytest.mark.parametrize("k", [-2, 0, 3])
def test_strichartz_unitarity_row(k):
    row = strichartz_ratio(k, LebesguePair(INF, 2), "schrodinger", trials=2)
    assert row["ratio"] == pytest.approx(1.0, abs=1e-10)
    assert not row["reflective"]


def test_strichartz_monotone_and_reproducible():
    pair = LebesguePair(4, 4)
    small = strichartz_ratio(2, pair, "schrodinger", trials=2, seed=3)
    big = strichartz_ratio(2, pair, "schrodinger", trials=4, seed=3)
    again = strichartz_ratio(2, pair, "schrodinger", trials=4, seed=3)
    assert big["ratio"] >= small["ratio"]
    assert big["ratio"] == again["ratio"]


def test_strichartz_endpoint_not_asserted():
    rep = strichartz_sweep(LebesguePair(2, Fraction(10, 3)), "schrodinger", [0, 1], trials=1)
    assert rep.summary["status"] == "not-asserted"


# -------------------------------------------------------------- transversality

def test_higher_derivative_recurrence_against_sympy():
    s, a, c = sympy.symbols("s a c", real=True)
    f = sympy.sqrt(1 + a**2 + 2 * a * c * s + s**2)
    lo, hi, n = 0.3, 1.7, 5
    grid_a = np.linspace(lo, hi, n)
    grid_c = np.linspace(-1, 1, 2 * n + 1)
    for m in range(3, 8):
        dm = sympy.lambdify((a, c), sympy.diff(f, s, m).subs(s, 0), "numpy")
        expect = max(abs(float(dm(x, y))) for x in grid_a for y in grid_c)
        assert _higher_derivative_sup("kg", lo, hi, m, n=n) == pytest.approx(expect, rel=1e-12)
    assert _higher_derivative_sup("schrodinger", lo, hi, 3) == 0.0


def test_transversality_closed_forms():
    # Schrodinger-Schrodinger: V_max = 2 (max|xi| + max|eta|) attained antiparallel
    t = transversality(BILINEAR_CASES[2], k1=0, k2=-12)
    assert t.v_max == 2 * ((2 + 2.0**-12) + 2.0**-11)
    assert t.h1 == t.h2 == 2.0 and t.d0 == 2.0**-12
    t = transversality(BILINEAR_CASES[1], k=-12, k1=4)
    b = 2.0**-11
    assert t.v_max == pytest.approx(2 * (32 + 2.0**-12) + b / np.sqrt(1 + b * b), rel=1e-12)
    # |grad xi^2| = 2|xi| on a shell reaching 2^(k1+1): the ratio to 2^k1 sits just above 4
    assert t.v_max / t.predicted_v == pytest.approx(4.0, rel=1e-4)


FROZEN_TRANSVERSALITY = {
    (BILINEAR_CASES[0], -12): (0.8954255869029281, 0.49815676603823295, 740.8764655814203),
    (BILINEAR_CASES[1], 4): (64.00097656244179, 0.2499808970057992, 707.0445533792217),
    (BILINEAR_CASES[2], 0): (4.00146484375, 0.24954240390482, 8194.0),
}


@pytest.mark.parametrize("key", sorted(FROZEN_TRANSVERSALITY))
def test_transversality_frozen(key):
    case, idx = key
    sweep = DEFAULT_TRANSVERSALITY[case]
    t = transversality(case, **sweep[0])
    v, a1, a2 = FROZEN_TRANSVERSALITY[key]
    assert t.k1 == idx
    assert t.v_max == pytest.approx(v, rel=1e-12)
    assert t.a1_constant == pytest.approx(a1, rel=1e-9)
    assert t.a2_margin == pytest.approx(a2, rel=1e-9)
    assert t.a1_ok and t.a2_ok


def test_transversality_sweeps_pass():
    for case, sweep in DEFAULT_TRANSVERSALITY.items():
        rep = transversality_sweep(case, sweep)
        assert rep.summary["status"] == "pass"
        assert all(v <= 4 for v in rep.summary["spreads"].values())


def test_transversality_hypotheses():
    with pytest.raises(ValueError):
        transversality(BILINEAR_CASES[0], k=0, k1=-5)
    with pytest.raises(ValueError):
        transversality("other", k=0, k1=-12)


# ------------------------------------------------------------------- bilinear

def test_bilinear_coefficients():
    assert bilinear_coefficient(BILINEAR_CASES[0], 0, -12, None) == 0.5
    assert bilinear_coefficient(BILINEAR_CASES[1], -12, 3, None) == 2.0**-2
    assert bilinear_coefficient(BILINEAR_CASES[2], None, 0, -12) == 0.5


def test_bilinear_row_reproducible():
    a = bilinear_ratio(BILINEAR_CASES[2], k1=0, k2=-10, trials=1, seed=2)
    b = bilinear_ratio(BILINEAR_CASES[2], k1=0, k2=-10, trials=1, seed=2)
    assert a["raw"] == b["raw"] > 0
    assert a["normalized"] == a["raw"] / a["coefficient"]


# ------------------------------------------------------------------ trilinear

def test_trilinear_coefficients():
    assert trilinear_coefficient("schrodinger", -3) == 1.0
    assert trilinear_coefficient("schrodinger", 4, 0.1) == pytest.approx(2.0 ** (-0.45 * 4))
    assert trilinear_coefficient("kg", 0) == pytest.approx(1 / np.sqrt(2))


def test_convolution_compatibility():
    assert _convolution_compatible(0, 0, 0)
    assert _convolution_compatible(0, -11, 0)
    assert not _convolution_compatible(8, 0, 0)
    assert not _convolution_compatible(-6, 4, 0)


@pytest.mark.parametrize("triple", [(8, 0, 0), (-6, 4, 0)])
def test_incompatible_triples_vanish(triple):
    row = trilinear_schrodinger(*triple, trials=1)
    assert row["raw"] <= INCOMPATIBLE_LIMIT and not row["compatible"]
    row = trilinear_kg(*triple, trials=1)
    assert row["raw"] <= INCOMPATIBLE_LIMIT


def test_pairing_swap_symmetry():
    scene = Scene([Wave("kg+", 1), Wave("schrodinger", 1), Wave("schrodinger", 0)])
    N, _ = scene.sample(0, 0, "swap")
    u1, _ = scene.sample(1, 0, "swap")
    u2, _ = scene.sample(2, 0, "swap")
    a = kg_pairing(N, u1, u2, scene)
    b = kg_pairing(N, u2, u1, scene)
    assert abs(a - b) <= 1e-12 * max(a, 1e-300)
    a = schrodinger_pairing(N, u1, u2, scene)
    b = schrodinger_pairing(N, u2, u1, scene)
    assert abs(a - b) <= 1e-12 * max(a, 1e-300)


def test_atom_third_factor():
    row = trilinear_schrodinger(3, 3, 3, trials=1, atom_steps=3)
    assert row["atom_steps"] == 3 and np.isfinite(row["normalized"]) and row["normalized"] > 0


# ------------------------------------------------------------------ summation

def brute_lemma_sum(x, y, z, delta, max_gap):
    L = len(x)
    total = 0.0
    for k, k1, k2 in itertools.product(range(L), repeat=3):
        lo, med, hi = sorted((k, k1, k2))
        if hi - med <= max_gap:
            total += 2.0 ** (-delta * lo) * x[k] * y[k1] * z[k2]
    return total


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 10), st.integers(0, 4), st.sampled_from([0.0, 0.05, 0.1]))
def test_lemma_sum_against_brute_force(seed, L, gap, delta):
    rng = np.random.default_rng(seed)
    x, y, z = (rng.uniform(0, 1, L) for _ in range(3))
    assert lemma_sum(x, y, z, delta, gap) == pytest.approx(brute_lemma_sum(x, y, z, delta, gap), rel=1e-12)


def test_summation_basis_vectors():
    triples = np.array([(3, 2, 3), (1, 1, 1)])
    for (k, k1, k2) in triples:
        x, y, z = np.zeros(4), np.zeros(4), np.zeros(4)
        x[k], y[k1], z[k2] = 1, 1, 1
        s = trilinear_sum(triples, x, y, z, 0.1)
        assert s == pytest.approx(2.0 ** (-0.1 * min(k, k1, k2)))
        assert s <= 1


def test_summation_check_bounded():
    res = summation_check(0.1, trials=50)
    assert 0 < res["constant"] <= 10
    assert res["n_triples"] == len(swept_triples())
    assert summation_check(0.1, trials=50) == res


def test_probe_settings_respected():
    st_small = ProbeSettings(window=8, steps=8)
    scene = Scene([Wave("schrodinger", 0)], st_small)
    assert scene.times.size == 65
