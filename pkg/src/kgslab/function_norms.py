"""Spacetime norms: mixed Lebesgue, Sobolev, modulation (X^{0,b,inf}), p-variation, U2 atoms."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .frequency_tools import (
    SpaceTimeField,
    bracket,
    dispersion,
    free_coefficients,
    modulation_band_norms,
    resolvable_modulations,
)
from .radial_spectral import (
    FrequencyField,
    RadialField,
    RadialGrid,
    dual_norm,
    forward_transform,
    forward_values,
    inverse_values,
    lq_norm_values,
)


def _check_exponent(x: float, name: str) -> float:
    x = float(x)
    if not (x >= 1 or np.isinf(x)) or np.isnan(x):
        raise ValueError(f"{name} must lie in [1, inf], got {x}")
    return x


def mixed_norm(F: SpaceTimeField, p: float, q: float) -> float:
    """L^p_t L^q_x with every time sample carrying weight dt."""
    p = _check_exponent(p, "p")
    q = _check_exponent(q, "q")
    per = lq_norm_values(F.values, F.grid, q)
    if np.isinf(p):
        return float(per.max())
    dt = F.dt if F.n_t > 1 else 1.0
    return float((np.sum(per**p) * dt) ** (1.0 / p))


def sobolev_norm(f: RadialField | FrequencyField, s: float) -> float:
    F = f if isinstance(f, FrequencyField) else forward_transform(f)
    return dual_norm(FrequencyField(F.grid, F.coeffs * bracket(F.grid.dual) ** s))


@dataclass(frozen=True)
class XsbResult:
    value: float
    j_min: int
    j_max: int
    bands: dict

    def __float__(self):
        return self.value


def xsb_norm(F: SpaceTimeField, b: float, flow: str) -> XsbResult:
    """sup_j 2^{bj} ||Q_j F|| over the bands the time grid can resolve."""
    j_min, j_max = resolvable_modulations(F.times)
    bands = modulation_band_norms(F, flow, j_min, j_max)
    value = max(2.0 ** (b * j) * bands[j] for j in range(j_min, j_max + 1))
    return XsbResult(float(value), j_min, j_max, bands)


# ------------------------------------------------------------- p-variation

def _as_rows(snapshots, grid: RadialGrid | None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(snapshots, np.ndarray):
        if grid is None:
            raise ValueError("a grid is needed to weight raw arrays")
        rows = np.atleast_2d(snapshots)
        return rows, grid.space_weights
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("p_variation needs at least one snapshot")
    g = snaps[0].grid
    if any(s.grid != g for s in snaps):
        raise ValueError("snapshots live on different grids")
    return np.stack([s.values for s in snaps]), g.space_weights


def _variation(rows: np.ndarray, weights: np.ndarray, p: float) -> float:
    n = rows.shape[0]
    if n == 0:
        raise ValueError("p_variation needs at least one snapshot")
    if n == 1:
        return 0.0
    y = rows * np.sqrt(weights)
    best = np.zeros(n)
    for j in range(1, n):
        d = y[:j] - y[j]
        dist = np.sqrt(np.einsum("ij,ij->i", d.real, d.real) + np.einsum("ij,ij->i", d.imag, d.imag))
        best[j] = np.max(best[:j] + dist**p)
    # prepending the first sample only adds a nonnegative increment, so both endpoints are free
    return float(best[-1] ** (1.0 / p))


def p_variation(snapshots, p: float = 2.0, grid: RadialGrid | None = None) -> float:
    """Exact sup over sub-partitions of the sample times of (sum ||x_j - x_i||^p)^(1/p).

    Dynamic program over the last chosen point, O(n^2) distance evaluations.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    rows, w = _as_rows(snapshots, grid)
    return _variation(rows, w, p)


def p_variation_exhaustive(rows: np.ndarray, p: float = 2.0) -> float:
    """Brute-force p-variation of a short sequence of vectors (unit weights).

    Enumerates every increasing index chain; exponential in length, meant as an oracle.
    """
    rows = np.asarray(rows)
    if rows.ndim == 1:
        rows = rows[:, None]
    n = rows.shape[0]
    dist = np.array([[np.linalg.norm(rows[i] - rows[j]) for j in range(n)] for i in range(n)])
    best = 0.0
    for size in range(2, n + 1):
        for chain in itertools.combinations(range(n), size):
            total = 0.0
            for a, b in zip(chain, chain[1:]):
                total += dist[a, b] ** p
            best = max(best, total)
    return float(best ** (1.0 / p))


def pullback_coefficients(F: SpaceTimeField, flow: str) -> np.ndarray:
    """Dual coefficients of S(-t) F(t) for the free flow S of `flow`."""
    phase = np.exp(-1j * np.multiply.outer(F.times, dispersion(flow, F.grid.dual)))
    return F.coefficients() * phase


def v2_norm(F: SpaceTimeField, flow: str) -> float:
    """Grid-restricted V^2 norm along `flow` (a lower bound for the continuum value).

    The variation is taken on the field as sampled; a tapered free wave is not
    constant after pull-back, so pass untapered fields when probing free flows.
    """
    C = pullback_coefficients(F, flow)
    return _variation(C, F.grid.dual_weights, 2.0)


# -------------------------------------------------------------- U2 atoms

@dataclass(frozen=True, eq=False)
class Atom:
    """Step function of free waves: S(t) phi_k on [t_{k-1}, t_k), t_0 = -inf, t_K = +inf."""

    jumps: tuple
    pieces: tuple

    def __post_init__(self):
        jumps = tuple(float(t) for t in self.jumps)
        if len(self.pieces) != len(jumps) + 1:
            raise ValueError("need exactly one more piece than jump times")
        if any(b <= a for a, b in zip(jumps, jumps[1:])):
            raise ValueError("jump times must be strictly increasing")
        if np.any(self.pieces[0].values != 0):
            raise ValueError("the first piece of an atom must vanish")
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "pieces", tuple(self.pieces))

    @property
    def mass(self) -> float:
        g = self.pieces[0].grid
        return float(sum(np.sum(np.abs(p.values) ** 2 * g.space_weights) for p in self.pieces))


@dataclass(frozen=True, eq=False)
class AtomicDecomposition:
    flow: str
    atoms: tuple
    weights: tuple = field(default=(1.0,))

    def __post_init__(self):
        dispersion(self.flow, 1.0)
        if len(self.atoms) != len(self.weights):
            raise ValueError("one weight per atom")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        for a in self.atoms:
            if abs(a.mass - 1.0) > 1e-10:
                raise ValueError(f"atom pieces must have total mass 1, got {a.mass}")

    @property
    def u2_upper(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def synthesize(self, times) -> SpaceTimeField:
        times = np.asarray(times, dtype=float)
        grid = self.atoms[0].pieces[0].grid
        C = np.zeros((times.size, grid.n_points), dtype=complex)
        for lam, atom in zip(self.weights, self.atoms):
            idx = np.searchsorted(atom.jumps, times, side="right")
            for k, piece in enumerate(atom.pieces):
                sel = idx == k
                if k == 0 or not np.any(sel):
                    continue
                c0 = forward_values(piece.values, grid)
                C[sel] += lam * free_coefficients(c0, self.flow, grid, times[sel])
        return SpaceTimeField(grid, times, inverse_values(C, grid))


def build_atom(jumps: Sequence[float], pieces: Sequence[RadialField], flow: str, times) -> tuple[SpaceTimeField, AtomicDecomposition]:
    """Normalise the pieces to total mass 1 and sample the atom on `times`.

    Every jump must be a sample time, so that the grid-restricted V^2 norm of a
    single atom is exact.
    """
    times = np.asarray(times, dtype=float)
    if not pieces:
        raise ValueError("no pieces given")
    grid = pieces[0].grid
    mass = sum(float(np.sum(np.abs(p.values) ** 2 * grid.space_weights)) for p in pieces)
    if mass == 0:
        raise ValueError("all pieces vanish")
    tol = 1e-9 * max(1.0, float(np.abs(times).max()))
    for t in jumps:
        if np.min(np.abs(times - t)) > tol:
            raise ValueError(f"jump time {t} is not on the time grid")
    scaled = tuple(p * (1.0 / np.sqrt(mass)) for p in pieces)
    decomp = AtomicDecomposition(flow, (Atom(tuple(jumps), scaled),), (1.0,))
    return decomp.synthesize(times), decomp


def z_norm_upper(blocks: Mapping[int, AtomicDecomposition], s: float, low_cut: int = -10) -> float:
    """Upper bound ||P_{<low_cut} u||_{U2} + (sum_{k >= low_cut} 2^{2ks} ||P_k u||_{U2}^2)^(1/2).

    Each U2 norm is replaced by the sum of |weights| of the block's decomposition;
    blocks below `low_cut` are added through the triangle inequality.
    """
    if not blocks:
        raise ValueError("no dyadic blocks given")
    low = sum(d.u2_upper for k, d in blocks.items() if k < low_cut)
    high = sum(2.0 ** (2 * k * s) * d.u2_upper**2 for k, d in blocks.items() if k >= low_cut)
    return float(low + np.sqrt(high))


@dataclass(frozen=True)
class RegularityParams:
    s: float = 0.0
    r: float = 0.0
    epsilon: float = 0.1
    delta: float = 0.01

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if not (self.s - 0.5 < self.r < self.s + 2):
            raise ValueError("need s - 1/2 < r < s + 2")
        if not (0 < self.epsilon <= 0.25):
            raise ValueError("epsilon must lie in (0, 1/4]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
