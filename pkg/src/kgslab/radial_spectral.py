"""Radial grids and the 3D radial Fourier transform.

A radial function f(|x|) on R^3 is sampled at r_i = i*dr, i = 1..n, with a
Dirichlet wall at r_max = (n+1)*dr.  Writing v = r*f turns the 3D transform

    F(xi) = (4*pi/xi) * int_0^inf f(r) sin(r*xi) r dr

into a sine transform of v, which on the uniform grid is exactly a DST-I.
The dual nodes are xi_m = m*pi/r_max.  With the rectangle rule the pair is
exactly unitary between

    ||f||^2 = 4*pi * sum |f_i|^2 r_i^2 dr
    ||F||^2 = sum |F_m|^2 xi_m^2 / (2*pi*r_max)

which is the discrete form of (2*pi)^-3 int |F|^2 d^3xi.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

MIN_POINTS = 16


@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    n_points: int

    @property
    def dr(self) -> float:
        return self.r_max / (self.n_points + 1)

    @property
    def dxi(self) -> float:
        return np.pi / self.r_max

    @cached_property
    def nodes(self) -> np.ndarray:
        r = np.arange(1, self.n_points + 1) * self.dr
        r.flags.writeable = False
        return r

    @cached_property
    def dual(self) -> np.ndarray:
        xi = np.arange(1, self.n_points + 1) * self.dxi
        xi.flags.writeable = False
        return xi

    @cached_property
    def space_weights(self) -> np.ndarray:
        """Quadrature weights 4*pi*r^2*dr."""
        w = 4.0 * np.pi * self.nodes**2 * self.dr
        w.flags.writeable = False
        return w

    @cached_property
    def dual_weights(self) -> np.ndarray:
        """Weights making sum |F|^2 w equal to the spatial L2 norm squared."""
        w = self.dual**2 / (2.0 * np.pi * self.r_max)
        w.flags.writeable = False
        return w

    @property
    def xi_max(self) -> float:
        return float(self.dual[-1])

    def nyquist_octave(self) -> int:
        """Largest k whose annulus [2^(k-1), 2^(k+1)] still starts below xi_max."""
        return int(np.floor(np.log2(self.xi_max))) + 1

    def nodes_in(self, lo: float, hi: float) -> int:
        """Number of dual nodes strictly inside (lo, hi)."""
        xi = self.dual
        return int(np.count_nonzero((xi > lo) & (xi < hi)))


def make_grid(r_max: float, n_points: int, *, min_points: int = MIN_POINTS) -> RadialGrid:
    if not np.isfinite(r_max) or r_max <= 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    if int(n_points) != n_points or n_points < min_points:
        raise ValueError(f"n_points must be an integer >= {min_points}, got {n_points}")
    return RadialGrid(float(r_max), int(n_points))


def _is_extended(a) -> bool:
    return np.asarray(a).dtype in (np.longdouble, np.clongdouble)


def _check_values(values: np.ndarray, grid: RadialGrid, what: str) -> np.ndarray:
    # extended precision input stays extended; everything else becomes complex128
    arr = np.asarray(values)
    arr = arr.astype(np.clongdouble if _is_extended(arr) else complex, copy=False)
    if arr.shape[-1:] != (grid.n_points,):
        raise ValueError(f"{what} must have trailing length {grid.n_points}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        arr = _check_values(self.values, self.grid, "values")
        if arr.ndim != 1:
            raise ValueError("RadialField values must be one-dimensional")
        object.__setattr__(self, "values", arr)

    def __add__(self, other: "RadialField") -> "RadialField":
        _same_grid(self.grid, other.grid)
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other: "RadialField") -> "RadialField":
        _same_grid(self.grid, other.grid)
        return RadialField(self.grid, self.values - other.values)

    def __mul__(self, c) -> "RadialField":
        return RadialField(self.grid, self.values * c)

    __rmul__ = __mul__

    def conj(self) -> "RadialField":
        return RadialField(self.grid, self.values.conj())


@dataclass(frozen=True, eq=False)
class FrequencyField:
    grid: RadialGrid
    coeffs: np.ndarray

    def __post_init__(self):
        arr = _check_values(self.coeffs, self.grid, "coeffs")
        if arr.ndim != 1:
            raise ValueError("FrequencyField coeffs must be one-dimensional")
        object.__setattr__(self, "coeffs", arr)


def _same_grid(a: RadialGrid, b: RadialGrid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


# -- array level transforms (trailing axis), used by the batched code paths --
# Long double input is transformed in long double (pocketfft supports it); this is
# what makes pointwise checks against exponentially small exact values possible.

def _consts(grid: RadialGrid, extended: bool):
    if not extended:
        return np.pi, grid.dr, grid.nodes, grid.dual
    pi = 4 * np.arctan(np.longdouble(1))
    dr = np.longdouble(grid.r_max) / (grid.n_points + 1)
    k = np.arange(1, grid.n_points + 1, dtype=np.longdouble)
    return pi, dr, k * dr, k * (pi / np.longdouble(grid.r_max))


def forward_values(values: np.ndarray, grid: RadialGrid) -> np.ndarray:
    values = np.asarray(values)
    pi, dr, r, xi = _consts(grid, _is_extended(values))
    return (2 * pi * dr) * scipy.fft.dst(values * r, type=1, axis=-1) / xi


def inverse_values(coeffs: np.ndarray, grid: RadialGrid) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    pi, dr, r, xi = _consts(grid, _is_extended(coeffs))
    v = scipy.fft.dst(coeffs * (xi / (2 * pi * dr)), type=1, axis=-1) / (2 * (grid.n_points + 1))
    return v / r


def forward_transform(f: RadialField) -> FrequencyField:
    return FrequencyField(f.grid, forward_values(f.values, f.grid))


def inverse_transform(F: FrequencyField) -> RadialField:
    return RadialField(F.grid, inverse_values(F.coeffs, F.grid))


def evaluate_at(coeffs: np.ndarray, grid: RadialGrid, r: np.ndarray, modes: np.ndarray | None = None) -> np.ndarray:
    """Band-limited evaluation of the field with dual coefficients `coeffs` at arbitrary radii.

    Uses only the dual nodes selected by `modes` (boolean mask or index array), which
    makes it cheap for fields supported on a thin annulus.  `coeffs` may carry leading
    axes (e.g. time); the result has shape coeffs.shape[:-1] + r.shape.
    """
    r = np.asarray(r, dtype=float)
    xi = grid.dual
    c = np.asarray(coeffs)
    if modes is not None:
        xi = xi[modes]
        c = c[..., modes]
    basis = np.sin(np.multiply.outer(xi, r.ravel()))  # (m, nr)
    v = (c * xi) @ basis / (2.0 * np.pi * grid.r_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = v / r.ravel()
    # r = 0 limit: v(r)/r -> sum xi^2 F / (2 pi r_max)
    zero = r.ravel() == 0
    if np.any(zero):
        out[..., zero] = ((c * xi * xi).sum(axis=-1) / (2.0 * np.pi * grid.r_max))[..., None]
    return out.reshape(c.shape[:-1] + r.shape)


# -- integrals --

def l2_inner(f: RadialField, g: RadialField) -> complex:
    _same_grid(f.grid, g.grid)
    return complex(np.sum(f.values * np.conj(g.values) * f.grid.space_weights))


def lq_norm_values(values: np.ndarray, grid: RadialGrid, q: float) -> np.ndarray:
    """L^q_x norm along the trailing axis."""
    if q < 1:
        raise ValueError(f"exponent q must be >= 1, got {q}")
    a = np.abs(values)
    if np.isinf(q):
        return a.max(axis=-1)
    if q == 2:
        return np.sqrt(np.sum(a * a * grid.space_weights, axis=-1))
    return np.sum(a**q * grid.space_weights, axis=-1) ** (1.0 / q)


def lq_norm(f: RadialField, q: float) -> float:
    return float(lq_norm_values(f.values, f.grid, q))


def l2_norm(f: RadialField) -> float:
    return lq_norm(f, 2)


def dual_norm(F: FrequencyField) -> float:
    return float(np.sqrt(np.sum(np.abs(F.coeffs) ** 2 * F.grid.dual_weights)))


def outer_energy_fraction(values: np.ndarray, grid: RadialGrid, frac: float = 0.9) -> np.ndarray:
    """Share of L2 mass at r > frac*r_max (trailing axis); the reflectivity diagnostic."""
    w = np.abs(values) ** 2 * grid.space_weights
    total = w.sum(axis=-1)
    outer = w[..., grid.nodes > frac * grid.r_max].sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, outer / np.where(total > 0, total, 1.0), 0.0)


REFLECTIVITY_LIMIT = 1e-6


def reflectivity_flag(values: np.ndarray, grid: RadialGrid) -> bool:
    """True when any snapshot carries more than 1e-6 of its mass near the wall."""
    return bool(np.any(outer_energy_fraction(values, grid) > REFLECTIVITY_LIMIT))
