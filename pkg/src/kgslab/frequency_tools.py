"""Dyadic cutoffs, Fourier multipliers, free flows and modulation projections.

Conventions
-----------
A free solution of flow `f` has dual coefficients c(t) = exp(i*omega(xi)*t) c(0) with

    schrodinger : omega = -xi^2        (solves (i d_t + Lap) u = 0)
    kg+         : omega = +<xi>        (solves (i d_t + <D>) N = 0)
    kg-         : omega = -<xi>

Time transforms use F(tau) = sum_t f(t) exp(-i tau t), so a free wave sits on
tau = omega(xi) and the modulation of a spacetime field is |tau - omega(xi)|.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .radial_spectral import (
    FrequencyField,
    RadialField,
    RadialGrid,
    forward_transform,
    forward_values,
    inverse_transform,
    inverse_values,
    lq_norm_values,
)

FLOWS = ("schrodinger", "kg+", "kg-")


# ---------------------------------------------------------------- cutoffs

def _q(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """0 for x <= 0, 1 for x >= 1, C-infinity in between."""
    a = _q(x)
    b = _q(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def rho0(s):
    s = np.abs(np.asarray(s, dtype=float))
    out = np.where(s <= 1.0, 1.0, 0.0)
    mid = (s > 1.0) & (s < 2.0)
    if np.any(mid):
        # (2-|s|)/((2-|s|)+(|s|-1)) simplifies to 2-|s|
        out = out.astype(float)
        out[mid] = smooth_step(2.0 - s[mid])
    return out if out.ndim else float(out)


def rho_k(y, k: int):
    y = np.abs(np.asarray(y, dtype=float))
    return rho0(y / 2.0**k) - rho0(y / 2.0 ** (k - 1))


def rho_tilde(y, k: int):
    return rho_k(y, k - 1) + rho_k(y, k) + rho_k(y, k + 1)


def rho_low(y, k: int):
    """Symbol of P_{<=k} = sum_{k' <= k} P_k'."""
    return rho0(np.abs(np.asarray(y, dtype=float)) / 2.0**k)


def lp_symbol(xi, k: int):
    """Symbol of P_k with the inhomogeneous convention: P_0 = I - sum_{k>=1} P_k."""
    if k < 0:
        raise ValueError("P_k is defined for k >= 0; use annular_projection for signed k")
    return rho0(xi) if k == 0 else rho_k(xi, k)


Field = Union[RadialField, FrequencyField]


def _apply_symbol(f: Field, sym: np.ndarray) -> Field:
    if isinstance(f, FrequencyField):
        return FrequencyField(f.grid, f.coeffs * sym)
    return inverse_transform(FrequencyField(f.grid, forward_transform(f).coeffs * sym))


def littlewood_paley(f: Field, k: int) -> Field:
    return _apply_symbol(f, lp_symbol(f.grid.dual, k))


def annular_projection(f: Field, k: int) -> Field:
    """Pure annular cutoff rho_k for any integer k."""
    return _apply_symbol(f, rho_k(f.grid.dual, k))


def fattened_projection(f: Field, k: int) -> Field:
    return _apply_symbol(f, rho_tilde(f.grid.dual, k))


def low_projection(f: Field, k: int) -> Field:
    """P_{<k}."""
    return _apply_symbol(f, rho_low(f.grid.dual, k - 1))


# ------------------------------------------------------------- multipliers

def bracket(xi):
    return np.sqrt(1.0 + np.asarray(xi, dtype=float) ** 2)


def dispersion(flow: str, xi):
    if flow == "schrodinger":
        return -np.asarray(xi, dtype=float) ** 2
    if flow == "kg+":
        return bracket(xi)
    if flow == "kg-":
        return -bracket(xi)
    raise ValueError(f"unknown flow {flow!r}; expected one of {FLOWS}")


def group_speed(flow: str, xi):
    xi = np.asarray(xi, dtype=float)
    if flow == "schrodinger":
        return 2.0 * xi
    if flow in ("kg+", "kg-"):
        return xi / bracket(xi)
    raise ValueError(f"unknown flow {flow!r}")


@dataclass(frozen=True)
class BesselPower:
    s: float

    def symbol(self, xi):
        return bracket(xi) ** self.s


@dataclass(frozen=True)
class SchrodingerPhase:
    """Propagator exp(it Lap) of (i d_t + Lap) u = 0; symbol exp(-i t xi^2)."""
    t: float

    def symbol(self, xi):
        return np.exp(-1j * self.t * np.asarray(xi, dtype=float) ** 2)


@dataclass(frozen=True)
class KGPhase:
    """exp(+-i t <D>)."""
    t: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def symbol(self, xi):
        return np.exp(1j * self.sign * self.t * bracket(xi))


MultiplierSymbol = Union[BesselPower, SchrodingerPhase, KGPhase]


def flow_phase(flow: str, t: float) -> MultiplierSymbol:
    if flow == "schrodinger":
        return SchrodingerPhase(t)
    if flow == "kg+":
        return KGPhase(t, +1)
    if flow == "kg-":
        return KGPhase(t, -1)
    raise ValueError(f"unknown flow {flow!r}")


def apply_multiplier(f: Field, m: MultiplierSymbol) -> Field:
    return _apply_symbol(f, m.symbol(f.grid.dual))


# --------------------------------------------------------- spacetime fields

def time_window(times, flat: float = 0.5) -> np.ndarray:
    """Smooth taper built from rho0: 1 on the middle `flat` share of the span, 0 at both ends."""
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        return np.ones_like(t)
    half = 0.5 * (t[-1] - t[0])
    dist = np.abs(t - 0.5 * (t[0] + t[-1]))
    s = np.where(dist <= flat * half, 0.0, 1.0 + (dist - flat * half) / ((1.0 - flat) * half))
    return np.asarray(rho0(s), dtype=float)


def uniform_times(T: float, dt: float, t0: float = 0.0) -> np.ndarray:
    n = int(round(T / dt))
    return t0 + dt * np.arange(n + 1)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Snapshots on a uniform time grid.

    `values` are used as-is by every norm; `window` records the taper that was
    multiplied in (None for a raw field).
    """

    grid: RadialGrid
    times: np.ndarray
    values: np.ndarray
    window: np.ndarray | None = field(default=None)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("times must be a non-empty 1D array")
        if v.shape != (t.size, self.grid.n_points):
            raise ValueError(f"values shape {v.shape} does not match ({t.size}, {self.grid.n_points})")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(abs(steps[0]), 1e-300):
                raise ValueError("time grid must be uniform and increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values contain non-finite entries")
        if self.window is not None:
            w = np.asarray(self.window, dtype=float)
            if w.shape != t.shape or np.any(w < 0) or np.any(w > 1):
                raise ValueError("window weights must lie in [0, 1] on the time grid")
            object.__setattr__(self, "window", w)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def n_t(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_t > 1 else 0.0

    def snapshot(self, i: int) -> RadialField:
        return RadialField(self.grid, self.values[i])

    def coefficients(self) -> np.ndarray:
        return forward_values(self.values, self.grid)

    def conj(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.times, self.values.conj(), self.window)

    def l2(self) -> float:
        """L^2_{t,x} norm with rectangle rule in time."""
        per = lq_norm_values(self.values, self.grid, 2)
        return float(np.sqrt(np.sum(per**2) * (self.dt if self.n_t > 1 else 1.0)))


def free_coefficients(coeffs0: np.ndarray, flow: str, grid: RadialGrid, times) -> np.ndarray:
    phase = np.exp(1j * np.multiply.outer(np.asarray(times, dtype=float), dispersion(flow, grid.dual)))
    return phase * coeffs0


def free_wave(data: RadialField, flow: str, times, window: bool | np.ndarray = False) -> SpaceTimeField:
    times = np.asarray(times, dtype=float)
    C = free_coefficients(forward_transform(data).coeffs, flow, data.grid, times)
    values = inverse_values(C, data.grid)
    w = None
    if window is True:
        w = time_window(times)
    elif window is not False and window is not None:
        w = np.asarray(window, dtype=float)
    if w is not None:
        values = values * w[:, None]
    return SpaceTimeField(data.grid, times, values, w)


def random_annular_data(grid: RadialGrid, k: int, seed, radius: float | None = None) -> RadialField:
    """Random unit-L2 field with dual support inside the rho_k annulus.

    radius=None draws i.i.d. complex Gaussian dual coefficients (spread over the
    whole box).  With a radius the randomness is drawn in v = r*u on r <= radius
    before the annular filter, so the field is localised up to the filter's tails.
    """
    env = rho_k(grid.dual, k)
    if np.count_nonzero(env > 0) < 8:
        raise ValueError(
            f"annulus k={k} has fewer than 8 dual nodes on grid (r_max={grid.r_max}, n={grid.n_points})"
        )
    rng = np.random.default_rng(seed)
    if radius is None:
        c = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
    else:
        inside = grid.nodes <= radius
        v = np.zeros(grid.n_points, dtype=complex)
        m = int(np.count_nonzero(inside))
        v[inside] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        c = forward_values(v / grid.nodes, grid)
    c = c * env
    norm = np.sqrt(np.sum(np.abs(c) ** 2 * grid.dual_weights))
    if norm == 0:
        raise ValueError("degenerate random draw")
    return inverse_transform(FrequencyField(grid, c / norm))


# ------------------------------------------------------ modulation projections

def resolvable_modulations(times) -> tuple[int, int]:
    """(j_min, j_max): bands wider than the window's frequency spacing and below Nyquist."""
    t = np.asarray(times, dtype=float)
    span = t[-1] - t[0] + (t[1] - t[0])
    dt = t[1] - t[0]
    j_min = int(np.ceil(np.log2(2 * np.pi / span)))
    j_max = int(np.floor(np.log2(np.pi / dt))) + 1
    return j_min, j_max


def _modulation_spectrum(F: SpaceTimeField, flow: str):
    if F.window is None:
        raise ValueError("modulation projections need a windowed (tapered) field")
    if F.n_t < 8:
        raise ValueError("modulation projections need at least 8 time samples")
    spec = np.fft.fft(F.coefficients(), axis=0)
    tau = 2 * np.pi * np.fft.fftfreq(F.n_t, F.dt)
    period = 2 * np.pi / F.dt
    d = tau[:, None] - dispersion(flow, F.grid.dual)[None, :]
    d = np.mod(d + period / 2, period) - period / 2  # alias onto the sampled band
    return spec, np.abs(d)


def _from_spectrum(F: SpaceTimeField, spec: np.ndarray) -> SpaceTimeField:
    values = inverse_values(np.fft.ifft(spec, axis=0), F.grid)
    return SpaceTimeField(F.grid, F.times, values, F.window)


def modulation_project(F: SpaceTimeField, j: int, flow: str, mode: str = "Q") -> SpaceTimeField:
    spec, d = _modulation_spectrum(F, flow)
    if mode == "Q":
        mult = rho_k(d, j)
    elif mode == "Q<=":
        mult = rho_low(d, j)
    else:
        raise ValueError("mode must be 'Q' or 'Q<='")
    return _from_spectrum(F, spec * mult)


def modulation_band_norms(F: SpaceTimeField, flow: str, j_lo: int, j_hi: int) -> dict:
    """L^2_{t,x} norms of Q_{<=j_lo-1} F and Q_j F for j_lo <= j <= j_hi.

    Computed on the spectrum directly (Parseval in t, Plancherel in x), so the
    band masses add up to ||F||^2 up to the overlaps of neighbouring cutoffs.
    """
    spec, d = _modulation_spectrum(F, flow)
    w = F.grid.dual_weights[None, :]
    scale = F.dt / F.n_t
    out = {"low": float(np.sqrt(np.sum(np.abs(spec * rho_low(d, j_lo - 1)) ** 2 * w) * scale))}
    for j in range(j_lo, j_hi + 1):
        out[j] = float(np.sqrt(np.sum(np.abs(spec * rho_k(d, j)) ** 2 * w) * scale))
    return out
