"""Radial Klein-Gordon-Schrodinger solver in first-order form.

    (i d_t + Laplacian) u = u Re N
    (i d_t + <D>) N       = sign * <D>^-1 |u|^2,   sign = +1 by default

with N = n - i <D>^-1 d_t n, n the real meson field.  Both linear flows are
applied exactly in the dual (sine) basis; everything is stored as dual
coefficients on one RadialGrid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frequency_tools import bracket, dispersion
from .radial_spectral import (
    RadialField,
    RadialGrid,
    forward_values,
    inverse_values,
    outer_energy_fraction,
    REFLECTIVITY_LIMIT,
)

METHODS = ("strang_split", "exponential_rk2")
GROWTH_LIMIT = 10.0


class SolverAbort(RuntimeError):
    """Raised internally when a run must stop; solve() converts it into a partial trajectory."""


# ---------------------------------------------------------------- data types

@dataclass(frozen=True, eq=False)
class KGSState:
    u: RadialField
    N: RadialField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.N.grid:
            raise ValueError("u and N must share a grid")
        if not (np.all(np.isfinite(self.u.values)) and np.all(np.isfinite(self.N.values))):
            raise ValueError("state has non-finite entries")

    @property
    def grid(self) -> RadialGrid:
        return self.u.grid


@dataclass(frozen=True, eq=False)
class SecondOrderData:
    n0: RadialField
    n1: RadialField

    def __post_init__(self):
        for name, f in (("n0", self.n0), ("n1", self.n1)):
            v = np.asarray(f.values)
            scale = max(float(np.max(np.abs(v))), 1e-300)
            if np.iscomplexobj(v) and float(np.max(np.abs(v.imag))) > 1e-12 * scale:
                raise ValueError(f"{name} must be real-valued")
        if self.n0.grid != self.n1.grid:
            raise ValueError("n0 and n1 must share a grid")


def _multiply(values: np.ndarray, grid: RadialGrid, power: float) -> np.ndarray:
    return inverse_values(forward_values(values, grid) * bracket(grid.dual) ** power, grid)


def to_first_order(data: SecondOrderData) -> RadialField:
    """N0 = n0 - i <D>^-1 n1."""
    g = data.n0.grid
    n0 = np.real(data.n0.values)
    n1 = np.real(data.n1.values)
    return RadialField(g, n0 - 1j * _multiply(n1, g, -1.0))


def from_first_order(N: RadialField) -> SecondOrderData:
    """n = Re N, d_t n = -<D> Im N."""
    g = N.grid
    v = np.asarray(N.values, dtype=complex)
    return SecondOrderData(RadialField(g, v.real.copy()), RadialField(g, -_multiply(v.imag, g, 1.0)))


@dataclass
class Trajectory:
    grid: RadialGrid
    times: np.ndarray
    u_coeffs: np.ndarray       # (n_saved, n_points) dual coefficients
    N_coeffs: np.ndarray
    dt: float
    method: str
    coupling: float = 1.0
    kg_sign: int = 1
    aborted: str | None = None
    mass: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mass is None:
            self.mass = np.array([_l2(c, self.grid) for c in self.u_coeffs])

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> KGSState:
        g = self.grid
        return KGSState(RadialField(g, inverse_values(self.u_coeffs[i], g)),
                        RadialField(g, inverse_values(self.N_coeffs[i], g)), float(self.times[i]))

    @property
    def states(self) -> list:
        return [self.state(i) for i in range(len(self))]

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    @property
    def final(self) -> KGSState:
        return self.state(len(self) - 1)


def _l2(coeffs: np.ndarray, grid: RadialGrid) -> float:
    return float(np.sqrt(np.sum(np.abs(coeffs) ** 2 * grid.dual_weights, axis=-1)))


def _hs(coeffs: np.ndarray, grid: RadialGrid, s: float) -> np.ndarray:
    w = grid.dual_weights * bracket(grid.dual) ** (2 * s)
    return np.sqrt(np.sum(np.abs(coeffs) ** 2 * w, axis=-1))


# ---------------------------------------------------------------- the system

class System:
    """Linear symbols and nonlinearity on dual coefficients."""

    def __init__(self, grid: RadialGrid, coupling: float = 1.0, kg_sign: int = 1):
        if kg_sign not in (1, -1):
            raise ValueError("kg_sign must be +1 or -1")
        self.grid = grid
        self.coupling = float(coupling)
        self.kg_sign = kg_sign
        self.omega_u = dispersion("schrodinger", grid.dual)
        self.omega_N = dispersion("kg+", grid.dual)
        self.inv_bracket = 1.0 / bracket(grid.dual)

    def linear(self, cu, cN, h):
        return cu * np.exp(1j * h * self.omega_u), cN * np.exp(1j * h * self.omega_N)

    def rhs(self, cu, cN):
        """Nonlinear parts of d_t (u, N) as dual coefficients."""
        g = self.grid
        u = inverse_values(cu, g)
        N = inverse_values(cN, g)
        fu = forward_values(-1j * self.coupling * u * N.real, g)
        fN = -1j * self.coupling * self.kg_sign * self.inv_bracket * forward_values(np.abs(u) ** 2, g)
        return fu, fN

    def nonlinear_exact(self, cu, cN, h):
        """Exact flow of the nonlinear part: |u| is frozen, so both equations integrate in closed form."""
        g = self.grid
        u = inverse_values(cu, g)
        N = inverse_values(cN, g)
        u_new = u * np.exp(-1j * h * self.coupling * N.real)
        dN = -1j * h * self.coupling * self.kg_sign * self.inv_bracket * forward_values(np.abs(u) ** 2, g)
        return forward_values(u_new, g), cN + dN


def _strang(sys: System, cu, cN, h):
    cu, cN = sys.linear(cu, cN, h / 2)
    cu, cN = sys.nonlinear_exact(cu, cN, h)
    return sys.linear(cu, cN, h / 2)


def _exp_rk2(sys: System, cu, cN, h):
    """Exponential midpoint rule in the interaction picture (Lawson form)."""
    fu, fN = sys.rhs(cu, cN)
    mu, mN = sys.linear(cu + 0.5 * h * fu, cN + 0.5 * h * fN, h / 2)
    gu, gN = sys.rhs(mu, mN)
    au, aN = sys.linear(cu, cN, h)
    bu, bN = sys.linear(gu, gN, h / 2)
    return au + h * bu, aN + h * bN


_SCHEMES = {"strang_split": _strang, "exponential_rk2": _exp_rk2}


def step(state: KGSState, dt: float, method: str = "strang_split", coupling: float = 1.0,
         kg_sign: int = 1) -> KGSState:
    if method not in _SCHEMES:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    g = state.grid
    sys = System(g, coupling, kg_sign)
    cu, cN = forward_values(state.u.values, g), forward_values(state.N.values, g)
    nu, nN = _SCHEMES[method](sys, cu, cN, dt)
    _check_growth(cu, cN, nu, nN, g)
    return KGSState(RadialField(g, inverse_values(nu, g)), RadialField(g, inverse_values(nN, g)), state.t + dt)


def _check_growth(cu, cN, nu, nN, g):
    before = _l2(cu, g) + _l2(cN, g)
    after = _l2(nu, g) + _l2(nN, g)
    if not np.isfinite(after) or (before > 0 and after > GROWTH_LIMIT * before):
        raise SolverAbort(f"norm grew from {before:.3g} to {after:.3g} in one step")


def _reflective(cu, cN, g) -> bool:
    vals = inverse_values(np.stack([cu, cN]), g)
    return bool(np.any(outer_energy_fraction(vals, g) > REFLECTIVITY_LIMIT))


def solve(u0: RadialField, N0: RadialField, T: float, dt: float, method: str = "strang_split",
          coupling: float = 1.0, kg_sign: int = 1, save_every: int = 1,
          monitor_reflectivity: bool = True) -> Trajectory:
    """Integrate on [0, T]; on instability or wall contact returns the trajectory so far with `aborted` set."""
    if method not in _SCHEMES:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if dt == 0 or save_every < 1:
        raise ValueError("need dt != 0 and save_every >= 1")
    n_steps = int(round(abs(T / dt)))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    g = u0.grid
    if N0.grid != g:
        raise ValueError("u0 and N0 must share a grid")
    sys = System(g, coupling, kg_sign)
    scheme = _SCHEMES[method]
    cu = forward_values(np.asarray(u0.values, dtype=complex), g)
    cN = forward_values(np.asarray(N0.values, dtype=complex), g)
    times, us, Ns = [0.0], [cu], [cN]
    aborted = None
    for j in range(1, n_steps + 1):
        try:
            nu, nN = scheme(sys, cu, cN, dt)
            _check_growth(cu, cN, nu, nN, g)
        except SolverAbort as exc:
            aborted = f"instability at t={j * dt:.6g}: {exc}"
            break
        cu, cN = nu, nN
        if j % save_every == 0 or j == n_steps:
            times.append(j * dt)
            us.append(cu)
            Ns.append(cN)
            if monitor_reflectivity and _reflective(cu, cN, g):
                aborted = f"reflectivity at t={j * dt:.6g}"
                break
    return Trajectory(g, np.array(times), np.array(us), np.array(Ns), dt, method, coupling, kg_sign, aborted)


# ---------------------------------------------------------------- Picard iteration

@dataclass
class PicardResult:
    iterates: list
    differences: list          # sup_t (||u^(m+1) - u^(m)||_2 + ||N^(m+1) - N^(m)||_2)
    contractive: bool

    @property
    def ratios(self) -> list:
        d = self.differences
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]


def picard_iterate(u0: RadialField, N0: RadialField, T: float, dt: float, m_iters: int = 6,
                   coupling: float = 1.0, kg_sign: int = 1) -> PicardResult:
    """Iterates of the Duhamel map starting from the free flows.

    Each Duhamel integral uses the trapezoid rule on the dt grid with exact linear
    propagation between nodes:  X(t+h) = e^{hL} X(t) + h/2 (e^{hL} F(t) + F(t+h)).
    """
    g = u0.grid
    sys = System(g, coupling, kg_sign)
    n = int(round(T / dt))
    times = dt * np.arange(n + 1)
    cu0 = forward_values(np.asarray(u0.values, dtype=complex), g)
    cN0 = forward_values(np.asarray(N0.values, dtype=complex), g)
    U = cu0 * np.exp(1j * np.multiply.outer(times, sys.omega_u))
    Nn = cN0 * np.exp(1j * np.multiply.outer(times, sys.omega_N))
    iterates = [Trajectory(g, times, U, Nn, dt, "picard", coupling, kg_sign)]
    diffs = []
    pu, pN = np.exp(1j * dt * sys.omega_u), np.exp(1j * dt * sys.omega_N)
    for _ in range(m_iters):
        Fu, FN = sys.rhs(U, Nn)
        newU = np.empty_like(U)
        newN = np.empty_like(Nn)
        newU[0], newN[0] = cu0, cN0
        for j in range(n):
            newU[j + 1] = pu * (newU[j] + 0.5 * dt * Fu[j]) + 0.5 * dt * Fu[j + 1]
            newN[j + 1] = pN * (newN[j] + 0.5 * dt * FN[j]) + 0.5 * dt * FN[j + 1]
        d = float(np.max(_l2_rows(newU - U, g) + _l2_rows(newN - Nn, g)))
        diffs.append(d)
        U, Nn = newU, newN
        iterates.append(Trajectory(g, times, U, Nn, dt, "picard", coupling, kg_sign))
    contractive = all(b <= a for a, b in zip(diffs, diffs[1:]))
    return PicardResult(iterates, diffs, contractive)


def _l2_rows(C: np.ndarray, g: RadialGrid) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(C) ** 2 * g.dual_weights, axis=-1))


# ---------------------------------------------------------------- diagnostics

def pullback(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Dual coefficients of the profiles S(-t)u(t) and K(-t)N(t)."""
    g = traj.grid
    ou = dispersion("schrodinger", g.dual)
    oN = dispersion("kg+", g.dual)
    t = traj.times
    return (traj.u_coeffs * np.exp(-1j * np.multiply.outer(t, ou)),
            traj.N_coeffs * np.exp(-1j * np.multiply.outer(t, oN)))


@dataclass
class ScatteringReport:
    pairs: list                # dicts: t, t2, u_increment, N_increment
    correction: float          # ||w(T) - u0||_2
    epsilon: float

    @property
    def u_increments(self) -> list:
        return [p["u_increment"] for p in self.pairs]

    @property
    def monotone(self) -> bool:
        inc = self.u_increments
        return len(inc) >= 3 and all(b < a for a, b in zip(inc, inc[1:]))


def scattering_diagnostic(traj: Trajectory, epsilon: float = 0.1, start: float = 2.0) -> ScatteringReport:
    """Cauchy increments of the profiles on dyadic pairs (t, 2t), t = start, 2 start, ... <= T/2."""
    g = traj.grid
    W, M = pullback(traj)

    def index(t):
        i = int(np.argmin(np.abs(traj.times - t)))
        if abs(traj.times[i] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} was not saved in the trajectory")
        return i

    pairs = []
    t = start
    while 2 * t <= traj.times[-1] + 1e-12:
        i, j = index(t), index(2 * t)
        pairs.append(dict(t=t, t2=2 * t, u_increment=_l2(W[j] - W[i], g),
                          N_increment=float(_hs(M[j] - M[i], g, -0.5 + epsilon))))
        t *= 2
    correction = _l2(W[-1] - W[0], g)
    return ScatteringReport(pairs, correction, epsilon)


def residual(traj: Trajectory) -> float:
    """max over interior saved times of the equation residuals, relative to the data size.

    u part in H^-2, N part in H^-1.  Time derivatives are centred differences of
    the profiles (pulled back by the exact linear flows), so a free flow has zero
    residual and the remaining error is the O(h^2) of the difference quotient.
    """
    if len(traj) < 3:
        raise ValueError("residual needs at least three snapshots")
    h = np.diff(traj.times)
    if np.max(np.abs(h - h[0])) > 1e-9 * abs(h[0]):
        raise ValueError("snapshots must be uniformly spaced")
    h = h[0]
    g = traj.grid
    sys = System(g, traj.coupling, traj.kg_sign)
    W, M = pullback(traj)
    t = traj.times[1:-1]
    dW = (W[2:] - W[:-2]) / (2 * h)
    dM = (M[2:] - M[:-2]) / (2 * h)
    # i d_t u + Lap u = i e^{i w t} d_t W,  so the residual is i e^{i w t} dW - (i * rhs)
    ru_lin = 1j * np.exp(1j * np.multiply.outer(t, sys.omega_u)) * dW
    rN_lin = 1j * np.exp(1j * np.multiply.outer(t, sys.omega_N)) * dM
    fu, fN = sys.rhs(traj.u_coeffs[1:-1], traj.N_coeffs[1:-1])
    ru = ru_lin - 1j * fu
    rN = rN_lin - 1j * fN
    size = _l2(traj.u_coeffs[0], g) + _l2(traj.N_coeffs[0], g)
    total = _hs(ru, g, -2.0) + _hs(rN, g, -1.0)
    return float(np.max(total) / max(size, 1e-300))


def gaussian_data(grid: RadialGrid, delta: float, width: float = 4.0, phase: float = 0.0) -> RadialField:
    """delta * e^{i phase} * unit-L2 Gaussian of standard width `width`."""
    r = grid.nodes
    v = np.exp(-0.5 * (r / width) ** 2).astype(complex)
    norm = np.sqrt(np.sum(np.abs(v) ** 2 * grid.space_weights))
    return RadialField(grid, delta * np.exp(1j * phase) * v / norm)
