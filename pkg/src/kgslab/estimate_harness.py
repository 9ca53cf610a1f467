"""Numerical probes of the linear, bilinear and trilinear estimates.

Every probe value is a lower bound on the sup over data (random annular draws),
so pass criteria are boundedness and trend checks, never exact constants.

Probe geometry
--------------
Each wave at frequency 2^k has a natural length 2^-k and a natural time
2^-k / v(2^k), v the group speed.  Data are drawn spatially localised within
R0 natural lengths, the time window spans `window` natural times of the fastest
wave, and each grid is sized so the wave (plus the slowly decaying tails of a
compactly supported spectrum) never reaches 0.9*r_max.  Waves more than
`slow_gap` octaves below the fastest one live on their own coarse grid and are
synthesised on the shared evaluation grid from their few annular modes.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .frequency_tools import (
    SpaceTimeField,
    bracket,
    dispersion,
    free_coefficients,
    group_speed,
    random_annular_data,
    rho_k,
    time_window,
)
from .function_norms import mixed_norm, v2_norm
from .radial_spectral import (
    RadialGrid,
    evaluate_at,
    forward_values,
    inverse_values,
    make_grid,
    reflectivity_flag,
)

# ---------------------------------------------------------------- Lebesgue pairs

INF = math.inf


def _frac(x) -> Fraction | float:
    if isinstance(x, str):
        x = x.strip().lower()
        if x in ("inf", "infinity", "oo"):
            return INF
        return Fraction(x)
    if isinstance(x, float) and math.isinf(x):
        return INF
    return Fraction(x).limit_denominator(10**6) if isinstance(x, float) else Fraction(x)


def _recip(x) -> Fraction:
    return Fraction(0) if x == INF else 1 / Fraction(x)


@dataclass(frozen=True)
class LebesguePair:
    p: Fraction | float
    q: Fraction | float
    family: str = "schrodinger"

    def __post_init__(self):
        object.__setattr__(self, "p", _frac(self.p))
        object.__setattr__(self, "q", _frac(self.q))
        if self.family not in ("schrodinger", "wave"):
            raise ValueError("family must be 'schrodinger' or 'wave'")
        for x in (self.p, self.q):
            if not (x == INF or x >= 2):
                raise ValueError(f"exponents must lie in [2, inf], got {x}")

    @property
    def label(self) -> str:
        def s(x):
            return "inf" if x == INF else str(x)
        return f"({s(self.p)},{s(self.q)})"

    def as_floats(self) -> tuple[float, float]:
        return float(self.p), float(self.q)


def sigma(pair: LebesguePair) -> Fraction:
    """Derivative weight: 2/p + 3/q - 3/2 (Schrodinger) or 1/p + 3/q - 3/2 (wave)."""
    lead = 2 if pair.family == "schrodinger" else 1
    return lead * _recip(pair.p) + 3 * _recip(pair.q) - Fraction(3, 2)


def admissible(pair: LebesguePair) -> tuple[bool, str]:
    ip, iq = _recip(pair.p), _recip(pair.q)
    if pair.family == "schrodinger":
        if 2 * ip + 5 * iq > Fraction(5, 2):
            return False, "2/p + 5/q exceeds 5/2"
        if (pair.p, pair.q) == (2, Fraction(10, 3)):
            return False, "excluded endpoint (2, 10/3)"
        return True, "radially admissible"
    if ip + 2 * iq > 1:
        return False, "1/p + 2/q exceeds 1"
    if (pair.p, pair.q) == (2, 4):
        return False, "excluded endpoint (2, 4)"
    return True, "radially admissible"


REFERENCE_SCHRODINGER = [(INF, 2), (4, 4), (Fraction(8, 3), 3), (2, 6), (2, 5), (2, 4), (2, Fraction(10, 3))]
REFERENCE_WAVE = [(INF, 2), (4, 4), (Fraction(8, 3), 3)]


# ---------------------------------------------------------------- geometry

@dataclass(frozen=True)
class ProbeSettings:
    window: float = 16.0          # window length in natural times of the fastest wave
    steps: int = 16               # time samples per natural time
    radius: float = 2.0           # data radius in natural lengths
    tail: float = 50.0            # margin for spectral tails, natural lengths
    points_per_octave: float = 4.0  # Nyquist / (2^(k_max+1))
    slow_gap: int = 5
    min_points: int = 64


def natural_length(k: int) -> float:
    return 2.0 ** (-k)


def natural_time(flow: str, k: int) -> float:
    return natural_length(k) / float(group_speed(flow, 2.0**k))


def _tag(*parts) -> int:
    return zlib.crc32(repr(parts).encode())


def _rng(seed: int, *parts):
    return np.random.default_rng([int(seed), _tag(*parts)])


@dataclass(frozen=True)
class Wave:
    flow: str
    k: int


class Scene:
    """Shared time grid and evaluation grid for a set of interacting free waves."""

    def __init__(self, waves: Iterable[Wave], settings: ProbeSettings = ProbeSettings()):
        self.waves = tuple(waves)
        self.st = settings
        tau = min(natural_time(w.flow, w.k) for w in self.waves)
        n = int(round(settings.window * settings.steps))
        dt = tau / settings.steps
        self.times = dt * (np.arange(n + 1) - n / 2)
        self.window = time_window(self.times)
        k_max = max(w.k for w in self.waves)
        self.fast = tuple(w.k > k_max - settings.slow_gap for w in self.waves)
        half = 0.5 * (self.times[-1] - self.times[0])
        reach = max(
            (settings.radius + settings.tail) * natural_length(w.k) + float(group_speed(w.flow, 2.0 ** (w.k + 1))) * half
            for w, f in zip(self.waves, self.fast) if f
        )
        self.eval_grid = self._grid(reach / 0.9, k_max)
        self._own = {}
        for i, (w, f) in enumerate(zip(self.waves, self.fast)):
            if not f:
                own_reach = (settings.radius + settings.tail) * natural_length(w.k) + float(
                    group_speed(w.flow, 2.0 ** (w.k + 1))) * half
                self._own[i] = self._grid(max(own_reach / 0.9, self.eval_grid.r_max), w.k)

    def _grid(self, r_max: float, k: int) -> RadialGrid:
        dr = np.pi / (self.st.points_per_octave * 2.0 ** (k + 1))
        n = max(self.st.min_points, int(math.ceil(r_max / dr)) - 1)
        return make_grid((n + 1) * dr, n)

    def sample(self, i: int, seed: int, *key) -> tuple[np.ndarray, bool]:
        """Raw (untapered) samples of wave i on the evaluation grid, plus its reflectivity flag."""
        w = self.waves[i]
        rng = _rng(seed, *key, i, w.flow, w.k)
        radius = self.st.radius * natural_length(w.k)
        if self.fast[i]:
            g = self.eval_grid
            data = random_annular_data(g, w.k, rng, radius=radius)
            C = free_coefficients(forward_values(data.values, g), w.flow, g, self.times)
            values = inverse_values(C, g)
            return values, reflectivity_flag(values, g)
        g = self._own[i]
        data = random_annular_data(g, w.k, rng, radius=radius)
        c0 = forward_values(data.values, g)
        ends = inverse_values(free_coefficients(c0, w.flow, g, self.times[[0, -1]]), g)
        modes = np.flatnonzero(rho_k(g.dual, w.k) > 0)
        C = free_coefficients(c0, w.flow, g, self.times)
        values = evaluate_at(C, g, self.eval_grid.nodes, modes)
        return values, reflectivity_flag(ends, g)

    def field(self, values: np.ndarray, window_power: int = 1) -> SpaceTimeField:
        w = self.window**window_power
        return SpaceTimeField(self.eval_grid, self.times, values * w[:, None], w)

    def describe(self) -> dict:
        return dict(
            dt=float(self.times[1] - self.times[0]),
            n_t=int(self.times.size),
            r_max=self.eval_grid.r_max,
            n_points=self.eval_grid.n_points,
        )


# ---------------------------------------------------------------- reports

@dataclass
class SweepReport:
    experiment: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


def fit_slope(x, y) -> float:
    """Least-squares slope of log2(y) against x."""
    x = np.asarray(x, dtype=float)
    y = np.log2(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min()) if v.min() > 0 else INF


# ---------------------------------------------------------------- Strichartz

def strichartz_ratio(k: int, pair: LebesguePair, flow: str, trials: int = 32, seed: int = 0,
                     weight: str | None = None, settings: ProbeSettings = ProbeSettings()) -> dict:
    """max over trials of 2^(k*sigma) ||windowed free wave||_{L^p L^q} / ||data||_2.

    `weight` picks the sigma family ("schrodinger" or "wave"); it defaults to the pair's.
    """
    fam = weight or pair.family
    sig = sigma(LebesguePair(pair.p, pair.q, fam))
    ok, reason = admissible(LebesguePair(pair.p, pair.q, fam))
    scene = Scene([Wave(flow, k)], settings)
    p, q = pair.as_floats()
    best, reflective = 0.0, False
    for trial in range(trials):
        values, refl = scene.sample(0, seed, "strichartz", flow, trial)
        reflective |= refl
        best = max(best, mixed_norm(scene.field(values), p, q))
    return dict(
        experiment="strichartz-sweep", flow=flow, weight=fam, pair=pair.label, k=k, sigma=float(sig),
        raw=best, ratio=2.0 ** (k * float(sig)) * best, trials=trials, seed=seed,
        admissible=ok, reason=reason, reflective=reflective, **scene.describe(),
    )


def strichartz_sweep(pair: LebesguePair, flow: str, ks: Iterable[int], trials: int = 32, seed: int = 0,
                     weight: str | None = None, settings: ProbeSettings = ProbeSettings(),
                     max_spread: float = 4.0) -> SweepReport:
    rows = [strichartz_ratio(k, pair, flow, trials, seed, weight, settings) for k in ks]
    ratios = [r["ratio"] for r in rows]
    sp = spread(ratios)
    admissible_ = rows[0]["admissible"]
    reflective = any(r["reflective"] for r in rows)
    if reflective:
        status = "reflective"
    elif not admissible_:
        status = "not-asserted"
    else:
        status = "pass" if sp <= max_spread else "fail"
    for r in rows:
        r["status"] = status
    summary = dict(pair=pair.label, flow=flow, weight=rows[0]["weight"], spread=sp,
                   max_normalized_ratio=max(ratios), status=status)
    return SweepReport("strichartz-sweep", rows, summary)


def reference_sweeps() -> list[tuple[LebesguePair, str, str, list[int]]]:
    """(pair, flow, weight, k-range) for every reference row."""
    out = []
    for p, q in REFERENCE_SCHRODINGER:
        out.append((LebesguePair(p, q, "schrodinger"), "schrodinger", "schrodinger", list(range(-4, 7))))
    for p, q in REFERENCE_WAVE:
        out.append((LebesguePair(p, q, "wave"), "kg+", "wave", list(range(0, 7))))
    for p, q in REFERENCE_SCHRODINGER:
        out.append((LebesguePair(p, q, "schrodinger"), "kg+", "schrodinger", list(range(-6, 1))))
    return out


# ---------------------------------------------------------------- transversality

PHASES = ("kg", "schrodinger")


def _grad_mag(phase: str, a):
    a = np.asarray(a, dtype=float)
    return a / bracket(a) if phase == "kg" else 2 * a


def _hess_eigs(phase: str, a):
    """(radial, tangential) Hessian eigenvalues at |xi| = a."""
    a = np.asarray(a, dtype=float)
    if phase == "kg":
        b = bracket(a)
        return 1 / b**3, 1 / b
    return np.full_like(a, 2.0), np.full_like(a, 2.0)


def _higher_derivative_sup(phase: str, lo: float, hi: float, m: int, n: int = 200) -> float:
    """sup over |xi| in [lo, hi] of the norm of the m-th derivative tensor.

    For a symmetric tensor the norm is the sup over unit directions u of
    d^m/ds^m Phi(xi + s u) at s = 0.  For <xi> that is m! g_m, with g_j the Taylor
    coefficients of g(s) = sqrt(A + 2Bs + s^2), A = 1 + |xi|^2, B = xi.u.
    """
    if phase == "schrodinger":
        return 0.0
    a = np.linspace(lo, hi, n)[:, None]
    cos = np.linspace(-1, 1, 2 * n + 1)[None, :]
    A = 1 + a * a
    B = a * cos
    g = [np.sqrt(A) + 0 * cos]
    g.append(B / g[0])
    poly = {0: A, 1: 2 * B, 2: np.ones_like(B)}
    for j in range(2, m + 1):
        acc = poly.get(j, 0.0) - sum(g[i] * g[j - i] for i in range(1, j))
        g.append(acc / (2 * g[0]))
    return float(math.factorial(m) * np.max(np.abs(g[m])))


@dataclass
class TransversalityData:
    case: str
    k: int | None
    k1: int | None
    k2: int | None
    lambda1: tuple
    lambda2: tuple
    phase1: str
    phase2: str
    v_max: float
    h1: float
    h2: float
    d0: float
    predicted_v: float
    a1_constant: float
    a2_margin: float

    @property
    def a1_ok(self) -> bool:
        return self.a1_constant > 0

    @property
    def a2_ok(self) -> bool:
        return self.a2_margin >= 0


BILINEAR_CASES = ("kg-high-schrodinger-low", "kg-low-schrodinger-high", "schrodinger-high-low")


def _check_bilinear_hypothesis(case: str, k, k1, k2):
    if case == BILINEAR_CASES[0]:
        ok = -3 <= k <= 7 and k1 <= k - 10
    elif case == BILINEAR_CASES[1]:
        ok = k1 > -3 and k <= 10 and k <= k1 - 10
    elif case == BILINEAR_CASES[2]:
        ok = -3 <= k1 <= 10 and k2 <= k1 - 10
    else:
        raise ValueError(f"unknown case {case!r}; expected one of {BILINEAR_CASES}")
    if not ok:
        raise ValueError(f"indices k={k}, k1={k1}, k2={k2} violate the hypotheses of {case}")


def _regions(case: str, k, k1, k2):
    """(phase1, Lambda1, phase2, Lambda2, d0, predicted V_max) with radial intervals."""
    if case == BILINEAR_CASES[0]:
        return ("kg", (2.0 ** (k - 1) - 2.0**k1, 2.0 ** (k + 1) + 2.0**k1),
                "schrodinger", (0.0, 2.0 ** (k1 + 1)), 2.0**k1, 1.0)
    if case == BILINEAR_CASES[1]:
        return ("kg", (0.0, 2.0 ** (k + 1)),
                "schrodinger", (2.0 ** (k1 - 1) - 2.0**k, 2.0 ** (k1 + 1) + 2.0**k), 2.0**k, 2.0**k1)
    return ("schrodinger", (2.0 ** (k1 - 1) - 2.0**k2, 2.0 ** (k1 + 1) + 2.0**k2),
            "schrodinger", (0.0, 2.0 ** (k2 + 1)), 2.0**k2, 2.0**k1)


def _a1_constant(ph_j, Lj, ph_k, Lk, Hj, vmax, n=40, n_c=33, n_v=24) -> float:
    """min |(D^2 Phi_j(xi) v) ^ w| / (H_j V_max |v|) over xi in Lj, eta in Lk, v orthogonal to w,
    w = grad Phi_j(xi) - grad Phi_k(eta), sampled with xi on the first axis."""
    a = np.linspace(*Lj, n)[:, None, None, None]
    b = np.linspace(*Lk, n)[None, :, None, None]
    c = np.linspace(-1, 1, n_c)[None, None, :, None]
    alpha = np.linspace(0, np.pi, n_v, endpoint=False)[None, None, None, :]
    s = np.sqrt(1 - c * c)
    gj = _grad_mag(ph_j, a)
    gk = _grad_mag(ph_k, b)
    wx = gj - gk * c + 0 * alpha
    wy = -gk * s + 0 * alpha + 0 * a
    wn = np.sqrt(wx**2 + wy**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        px, py = -wy / wn, wx / wn
    px = np.where(wn > 0, px, 0.0)
    py = np.where(wn > 0, py, 1.0)
    vx, vy, vz = np.cos(alpha) * px, np.cos(alpha) * py, np.sin(alpha) + 0 * px
    lr, lt = _hess_eigs(ph_j, a)
    hx, hy, hz = lr * vx, lt * vy, lt * vz
    # (hx, hy, hz) x (wx, wy, 0)
    cx, cy, cz = -hz * wy, hz * wx, hx * wy - hy * wx
    wedge = np.sqrt(cx**2 + cy**2 + cz**2)
    return float(np.min(wedge) / (Hj * vmax))


def transversality(case: str, k: int | None = None, k1: int | None = None, k2: int | None = None,
                   resolution: int = 200) -> TransversalityData:
    _check_bilinear_hypothesis(case, k, k1, k2)
    ph1, L1, ph2, L2, d0, pred = _regions(case, k, k1, k2)
    a = np.linspace(*L1, resolution)
    b = np.linspace(*L2, resolution)
    # |g1 e - g2 e'| is largest for antiparallel directions; the scan keeps the cosine explicit
    cos = np.linspace(-1, 1, 41)
    g1 = _grad_mag(ph1, a)[:, None, None]
    g2 = _grad_mag(ph2, b)[None, :, None]
    v_max = float(np.sqrt(np.max(g1**2 + g2**2 - 2 * g1 * g2 * cos[None, None, :])))
    h1 = float(max(np.max(e) for e in _hess_eigs(ph1, a)))
    h2 = float(max(np.max(e) for e in _hess_eigs(ph2, b)))
    a1 = min(_a1_constant(ph1, L1, ph2, L2, h1, v_max), _a1_constant(ph2, L2, ph1, L1, h2, v_max))
    ratios = []
    for ph, L, h in ((ph1, L1, h1), (ph2, L2, h2)):
        for m in range(3, 16):
            D = _higher_derivative_sup(ph, *L, m)
            ratios.append(INF if D == 0 else (h / D) ** (1.0 / (m - 2)))
        ratios.append(v_max / h)
    a2 = min(ratios) / d0 - 1.0
    return TransversalityData(case, k, k1, k2, L1, L2, ph1, ph2, v_max, h1, h2, d0, pred, a1, a2)


def transversality_sweep(case: str, sweep: list[dict], max_spread: float = 4.0) -> SweepReport:
    rows = []
    for idx in sweep:
        t = transversality(case, **idx)
        d = asdict(t)
        d.update(experiment="transversality", v_normalized=t.v_max / t.predicted_v,
                 a1_ok=t.a1_ok, a2_ok=t.a2_ok)
        d["lambda1"] = f"[{t.lambda1[0]:.6g},{t.lambda1[1]:.6g}]"
        d["lambda2"] = f"[{t.lambda2[0]:.6g},{t.lambda2[1]:.6g}]"
        rows.append(d)
    spreads = {name: spread([r[name] for r in rows]) for name in ("v_normalized", "h1", "h2")}
    ok = all(s <= max_spread for s in spreads.values()) and all(r["a1_ok"] and r["a2_ok"] for r in rows)
    for r in rows:
        r["status"] = "pass" if ok else "fail"
    summary = dict(case=case, spreads=spreads, v_constants=[r["v_normalized"] for r in rows],
                   min_a1=min(r["a1_constant"] for r in rows), min_a2=min(r["a2_margin"] for r in rows),
                   status="pass" if ok else "fail")
    return SweepReport("transversality", rows, summary)


DEFAULT_TRANSVERSALITY = {
    BILINEAR_CASES[0]: [dict(k=0, k1=k1) for k1 in (-12, -11, -10)],
    BILINEAR_CASES[1]: [dict(k=-12, k1=k1) for k1 in (4, 5, 6)],
    BILINEAR_CASES[2]: [dict(k1=k1, k2=-12) for k1 in (0, 1, 2)],
}


# ---------------------------------------------------------------- bilinear

def bilinear_coefficient(case: str, k, k1, k2) -> float:
    if case == BILINEAR_CASES[0]:
        return 2.0 ** (k1 / 12)
    if case == BILINEAR_CASES[1]:
        return 2.0 ** (k / 12 - k1 / 3)
    return 2.0 ** (k2 / 12)


def _bilinear_waves(case: str, k, k1, k2):
    if case == BILINEAR_CASES[0] or case == BILINEAR_CASES[1]:
        return [Wave("kg+", k), Wave("schrodinger", k1)]
    return [Wave("schrodinger", k1), Wave("schrodinger", k2)]


def bilinear_ratio(case: str, k: int | None = None, k1: int | None = None, k2: int | None = None,
                   trials: int = 32, seed: int = 0, settings: ProbeSettings = ProbeSettings()) -> dict:
    """max over trials of ||w1 w2||_{L^{8/5}_t L^{3/2}_x} for unit data, w_i windowed free waves."""
    _check_bilinear_hypothesis(case, k, k1, k2)
    scene = Scene(_bilinear_waves(case, k, k1, k2), settings)
    best, reflective = 0.0, False
    for trial in range(trials):
        v1, r1 = scene.sample(0, seed, "bilinear", case, k, k1, k2, trial)
        v2, r2 = scene.sample(1, seed, "bilinear", case, k, k1, k2, trial)
        reflective |= r1 or r2
        best = max(best, mixed_norm(scene.field(v1 * v2, window_power=2), 1.6, 1.5))
    coef = bilinear_coefficient(case, k, k1, k2)
    return dict(experiment="bilinear-sweep", case=case, k=k, k1=k1, k2=k2, raw=best, coefficient=coef,
                normalized=best / coef, trials=trials, seed=seed, reflective=reflective, **scene.describe())


SLOPE_BAND = 0.15

# low-frequency sweeps over three octaves; the index that varies is `sweep_key`
DEFAULT_BILINEAR = {
    BILINEAR_CASES[0]: ("k1", [dict(k=0, k1=j) for j in (-12, -11, -10)]),
    BILINEAR_CASES[1]: ("k", [dict(k=j, k1=0) for j in (-12, -11, -10)]),
    BILINEAR_CASES[2]: ("k2", [dict(k1=0, k2=j) for j in (-12, -11, -10)]),
}


def bilinear_sweep(case: str, sweep: list[dict] | None = None, sweep_key: str | None = None,
                   trials: int = 32, seed: int = 0, settings: ProbeSettings = ProbeSettings()) -> SweepReport:
    """Fits log2-slopes of the normalised ratio (expected flat) and of the raw ratio (control)."""
    if sweep is None:
        sweep_key, sweep = DEFAULT_BILINEAR[case]
    rows = [bilinear_ratio(case, trials=trials, seed=seed, settings=settings, **idx) for idx in sweep]
    x = [r[sweep_key] for r in rows]
    slope = fit_slope(x, [r["normalized"] for r in rows])
    control = fit_slope(x, [r["raw"] for r in rows])
    flat = abs(slope) <= SLOPE_BAND
    control_ok = abs(control) > SLOPE_BAND
    status = "reflective" if any(r["reflective"] for r in rows) else ("pass" if flat and control_ok else "fail")
    for r in rows:
        r["status"] = status
    summary = dict(case=case, sweep_key=sweep_key, slope=slope, control_slope=control,
                   max_normalized_ratio=max(r["normalized"] for r in rows), status=status)
    return SweepReport("bilinear-sweep", rows, summary)


# ---------------------------------------------------------------- trilinear

def _pair_integral(values: np.ndarray, scene: Scene) -> complex:
    """int int F dx dt with the taper applied once."""
    g = scene.eval_grid
    dt = scene.times[1] - scene.times[0]
    return complex(np.sum((values * scene.window[:, None]) * g.space_weights[None, :]) * dt)


def schrodinger_pairing(N: np.ndarray, u1: np.ndarray, u2: np.ndarray, scene: Scene,
                        conj_u2: bool = True) -> float:
    """max over N and conj(N) of |int N u1 u2~|, u2~ = conj(u2) by default."""
    w2 = u2.conj() if conj_u2 else u2
    prod = u1 * w2
    return max(abs(_pair_integral(N * prod, scene)), abs(_pair_integral(N.conj() * prod, scene)))


def kg_pairing(N: np.ndarray, u1: np.ndarray, u2: np.ndarray, scene: Scene) -> float:
    """max over N and conj(N) of |int <D>^-1 (u1 conj(u2)) N|."""
    g = scene.eval_grid
    prod = forward_values(u1 * u2.conj(), g) / bracket(g.dual)
    smoothed = inverse_values(prod, g)
    return max(abs(_pair_integral(smoothed * N, scene)), abs(_pair_integral(smoothed * N.conj(), scene)))


def trilinear_coefficient(kind: str, k: int, epsilon: float = 0.1) -> float:
    if kind == "schrodinger":
        return min(1.0, 2.0 ** ((-0.5 + epsilon / 2) * k))
    return 1.0 / math.sqrt(1.0 + 4.0**k)


def _convolution_compatible(k, k1, k2) -> bool:
    """Fattened annuli admit xi = xi1 - xi2 (triangle inequality on the radial shells)."""
    lo = [2.0 ** (j - 1) for j in (k, k1, k2)]
    hi = [2.0 ** (j + 1) for j in (k, k1, k2)]
    for i in range(3):
        others = [j for j in range(3) if j != i]
        # |xi_i| must be reachable as |a +- b| with a, b in the other two shells
        reach_hi = hi[others[0]] + hi[others[1]]
        reach_lo = max(0.0, lo[others[0]] - hi[others[1]], lo[others[1]] - hi[others[0]])
        if lo[i] > reach_hi or hi[i] < reach_lo:
            return False
    return True


def _atom_values(scene: Scene, i: int, seed: int, steps: int, *key) -> tuple[np.ndarray, float]:
    """A U2 atom along wave i's flow: `steps` random jumps, pieces at wave i's frequency.

    Returns raw samples on the evaluation grid and the grid V^2 norm used to normalise it.
    """
    w = scene.waves[i]
    if not scene.fast[i]:
        raise ValueError("atoms are only supported for waves on the evaluation grid")
    g = scene.eval_grid
    rng = _rng(seed, "atom", *key, i)
    n_t = scene.times.size
    jumps = np.sort(rng.choice(np.arange(1, n_t - 1), size=steps, replace=False))
    C = np.zeros((n_t, g.n_points), dtype=complex)
    bounds = list(jumps) + [n_t]
    pieces = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        data = random_annular_data(g, w.k, rng, radius=scene.st.radius * natural_length(w.k))
        pieces.append(forward_values(data.values, g))
    mass = np.sqrt(len(pieces))
    for (a, b), c0 in zip(zip(bounds[:-1], bounds[1:]), pieces):
        C[a:b] = free_coefficients(c0 / mass, w.flow, g, scene.times[a:b])
    values = inverse_values(C, g)
    v2 = v2_norm(SpaceTimeField(g, scene.times, values), w.flow)
    return values, v2


def trilinear_schrodinger(k: int, k1: int, k2: int, trials: int = 32, seed: int = 0, epsilon: float = 0.1,
                          conj_u2: bool = True, atom_steps: int = 0,
                          settings: ProbeSettings = ProbeSettings()) -> dict:
    """N at 2^k on the Klein-Gordon flow, u1 and u2 at 2^k1, 2^k2 on the Schrodinger flow.

    With atom_steps > 0 the third factor is a U2 atom with that many jumps and the
    value is divided by its grid V^2 norm.
    """
    scene = Scene([Wave("kg+", k), Wave("schrodinger", k1), Wave("schrodinger", k2)], settings)
    best, reflective = 0.0, False
    for trial in range(trials):
        N, r0 = scene.sample(0, seed, "tri-s", k, k1, k2, trial)
        u1, r1 = scene.sample(1, seed, "tri-s", k, k1, k2, trial)
        if atom_steps:
            u2, norm2 = _atom_values(scene, 2, seed, atom_steps, "tri-s", k, k1, k2, trial)
            r2 = reflectivity_flag(u2, scene.eval_grid)
        else:
            (u2, r2), norm2 = scene.sample(2, seed, "tri-s", k, k1, k2, trial), 1.0
        reflective |= r0 or r1 or r2
        best = max(best, schrodinger_pairing(N, u1, u2, scene, conj_u2) / norm2)
    coef = trilinear_coefficient("schrodinger", k, epsilon)
    return dict(experiment="trilinear-sweep", kind="schrodinger", k=k, k1=k1, k2=k2, raw=best,
                coefficient=coef, normalized=best / coef, compatible=_convolution_compatible(k, k1, k2),
                atom_steps=atom_steps, trials=trials, seed=seed, reflective=reflective, **scene.describe())


def trilinear_kg(k: int, k1: int, k2: int, trials: int = 32, seed: int = 0,
                 settings: ProbeSettings = ProbeSettings()) -> dict:
    """|int <D>^-1(u1 conj u2) N| / <2^k>^-1 for unit free waves."""
    scene = Scene([Wave("kg+", k), Wave("schrodinger", k1), Wave("schrodinger", k2)], settings)
    best, reflective = 0.0, False
    for trial in range(trials):
        N, r0 = scene.sample(0, seed, "tri-k", k, k1, k2, trial)
        u1, r1 = scene.sample(1, seed, "tri-k", k, k1, k2, trial)
        u2, r2 = scene.sample(2, seed, "tri-k", k, k1, k2, trial)
        reflective |= r0 or r1 or r2
        best = max(best, kg_pairing(N, u1, u2, scene))
    coef = trilinear_coefficient("kg", k)
    return dict(experiment="trilinear-sweep", kind="kg", k=k, k1=k1, k2=k2, raw=best, coefficient=coef,
                normalized=best / coef, compatible=_convolution_compatible(k, k1, k2), atom_steps=0,
                trials=trials, seed=seed, reflective=reflective, **scene.describe())


TRILINEAR_GROUPS = {
    "schrodinger-diagonal": ("schrodinger", [(k, k, k) for k in range(2, 7)]),
    "schrodinger-transversal-high-n": ("schrodinger", [(0, -11, k2) for k2 in (-1, 0, 1)]),
    "schrodinger-transversal-low-n": ("schrodinger", [(k1 - 11, k1, k1) for k1 in (0, 1, 2)]),
    "kg-balanced": ("kg", [(k, k + 3, k + 3) for k in (0, 1, 2)]),
    "kg-transversal": ("kg", [(k1, k1, k1 - 11) for k1 in (0, 1, 2)]),
}
INCOMPATIBLE_TRIPLES = [(8, 0, 0), (-6, 4, 0)]
GROUP_SPREAD = 8.0
INCOMPATIBLE_LIMIT = 1e-8


def trilinear_sweep(group: str, trials: int = 32, seed: int = 0, epsilon: float = 0.1,
                    settings: ProbeSettings = ProbeSettings(), atom_steps: int = 0) -> SweepReport:
    kind, triples = TRILINEAR_GROUPS[group]
    rows = []
    for k, k1, k2 in triples:
        if kind == "schrodinger":
            row = trilinear_schrodinger(k, k1, k2, trials, seed, epsilon, atom_steps=atom_steps, settings=settings)
        else:
            row = trilinear_kg(k, k1, k2, trials, seed, settings)
        row["group"] = group
        rows.append(row)
    sp = spread([r["normalized"] for r in rows])
    status = "reflective" if any(r["reflective"] for r in rows) else ("pass" if sp <= GROUP_SPREAD else "fail")
    for r in rows:
        r["status"] = status
    return SweepReport("trilinear-sweep", rows, dict(group=group, spread=sp, status=status,
                                                     max_normalized_ratio=max(r["normalized"] for r in rows)))


def incompatible_check(trials: int = 4, seed: int = 0, settings: ProbeSettings = ProbeSettings()) -> SweepReport:
    rows = []
    for k, k1, k2 in INCOMPATIBLE_TRIPLES:
        for row in (trilinear_schrodinger(k, k1, k2, trials, seed, settings=settings),
                    trilinear_kg(k, k1, k2, trials, seed, settings)):
            row["group"] = "incompatible"
            row["status"] = "pass" if (not row["compatible"] and row["raw"] <= INCOMPATIBLE_LIMIT) else "fail"
            rows.append(row)
    ok = all(r["status"] == "pass" for r in rows)
    return SweepReport("trilinear-sweep", rows, dict(group="incompatible", status="pass" if ok else "fail",
                                                     max_raw=max(r["raw"] for r in rows)))


# ---------------------------------------------------------------- summation

def swept_triples(max_gap: int = 10) -> list[tuple[int, int, int]]:
    """Frequency triples of the default trilinear sweeps with |max - med| <= max_gap."""
    out = []
    for _, (_, triples) in TRILINEAR_GROUPS.items():
        for t in triples:
            s = sorted(t)
            if s[2] - s[1] <= max_gap:
                out.append(tuple(t))
    return sorted(set(out))


def lemma_sum(x: np.ndarray, y: np.ndarray, z: np.ndarray, delta: float, max_gap: int = 10) -> float:
    """Sum over all (k, k1, k2) in [0, L)^3 with |max - med| <= max_gap of 2^(-delta min) x_k y_k1 z_k2."""
    L = len(x)
    r = np.arange(L)
    a, b = np.meshgrid(r, r, indexing="ij")
    yz = np.outer(y, z)
    total = 0.0
    lo_ab, hi_ab = np.minimum(a, b), np.maximum(a, b)
    for k in range(L):
        low = np.minimum(lo_ab, k)
        high = np.maximum(hi_ab, k)
        med = a + b + k - low - high
        weight = np.where(high - med <= max_gap, 2.0 ** (-delta * low), 0.0)
        total += x[k] * float(np.sum(weight * yz))
    return total


def trilinear_sum(triples: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray, delta: float,
                  offset: int = 0) -> float:
    t = np.asarray(triples) - offset
    low = np.min(np.asarray(triples), axis=1)
    return float(np.sum(2.0 ** (-delta * low) * x[t[:, 0]] * y[t[:, 1]] * z[t[:, 2]]))


def summation_check(delta: float = 0.1, triples=None, trials: int = 200, seed: int = 0) -> dict:
    """Largest observed sum / (|x| |y| |z|) over random nonnegative unit sequences."""
    triples = np.asarray(swept_triples() if triples is None else triples, dtype=int)
    lo, hi = int(triples.min()), int(triples.max())
    n = hi - lo + 1
    rng = _rng(seed, "summation", delta)
    best = 0.0
    for _ in range(trials):
        x, y, z = (np.abs(rng.standard_normal(n)) for _ in range(3))
        x, y, z = x / np.linalg.norm(x), y / np.linalg.norm(y), z / np.linalg.norm(z)
        best = max(best, trilinear_sum(triples, x, y, z, delta, offset=lo))
    return dict(experiment="summation-check", delta=delta, n_triples=int(len(triples)), index_lo=lo,
                index_hi=hi, trials=trials, seed=seed, constant=best)


def summation_growth(lengths=(64, 128, 256), delta: float = 0.0) -> dict:
    """Constant sequences on [0, L) over the full index set.

    Reports the raw sum and the normalised constant sum / L^(3/2) with their
    fitted log-log growth exponents.  Without the 2^(-delta min) gain the index
    set has ~L^2 members, so the normalised constant grows like L^(1/2).
    """
    rows = []
    for L in lengths:
        ones = np.ones(L)
        total = lemma_sum(ones, ones, ones, delta)
        rows.append(dict(length=L, sum=total, normalized=total / L**1.5))
    x = np.log2(lengths)
    return dict(delta=delta, rows=rows, normalized_exponent=fit_slope(x, [r["normalized"] for r in rows]),
                raw_exponent=fit_slope(x, [r["sum"] for r in rows]))
