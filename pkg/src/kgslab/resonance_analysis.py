"""Resonance functions of the uN, u(N bar) and <D>^-1|u|^2 interactions and their minima
over dyadic shells.

With a = |xi|, b = |eta| and c the cosine of the angle between them,
|xi - eta|^2 = a^2 + b^2 - 2abc, and

    phi_+ = a^2 - <b> - |xi-eta|^2 = -<b> - b^2 + 2abc
    phi_- = a^2 + <b> - |xi-eta|^2 = +<b> - b^2 + 2abc
    psi   = <a> - |xi-eta|^2 + b^2 = <a> - a^2 + 2abc

All three are affine in c, so for fixed (a, b) the minimum of |.| over the
admissible c-interval is exact; only (a, b) is scanned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FUNCTIONS = ("phi+", "phi-", "psi")


@dataclass(frozen=True)
class ResonancePoint:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b are lengths and must be nonnegative")
        if not -1.0 <= self.c <= 1.0:
            raise ValueError("c is a cosine and must lie in [-1, 1]")

    @property
    def diff(self) -> float:
        return float(np.sqrt(max(self.a**2 + self.b**2 - 2 * self.a * self.b * self.c, 0.0)))


def _affine_parts(fn: str, a, b):
    """value = const + slope * c."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if fn == "phi+":
        const = -np.sqrt(1 + b * b) - b * b
    elif fn == "phi-":
        const = np.sqrt(1 + b * b) - b * b
    elif fn == "psi":
        const = np.sqrt(1 + a * a) - a * a
    else:
        raise ValueError(f"unknown resonance function {fn!r}; expected one of {FUNCTIONS}")
    return const, 2 * a * b


def evaluate(fn: str, a, b, c):
    const, slope = _affine_parts(fn, a, b)
    return const + slope * np.asarray(c, dtype=float)


def phi(point: ResonancePoint, sign: int = 1) -> float:
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return float(evaluate("phi+" if sign == 1 else "phi-", point.a, point.b, point.c))


def psi(point: ResonancePoint) -> float:
    return float(evaluate("psi", point.a, point.b, point.c))


# ----------------------------------------------------------------- regions

@dataclass(frozen=True)
class Shell:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"bad radial interval [{self.lo}, {self.hi}]")

    @staticmethod
    def annulus(k: int) -> "Shell":
        """Support of the fattened cutoff at scale 2^k."""
        return Shell(2.0 ** (k - 1), 2.0 ** (k + 1))

    @staticmethod
    def ball(k: int) -> "Shell":
        return Shell(0.0, 2.0 ** (k + 1))

    @staticmethod
    def free() -> "Shell":
        return Shell(0.0, np.inf)


@dataclass(frozen=True)
class RegionSpec:
    xi: Shell
    eta: Shell
    diff: Shell = field(default_factory=Shell.free)
    resolution: int = 200
    zoom_rounds: int = 2

    def tightened(self) -> tuple[Shell, Shell] | None:
        """(xi, eta) ranges after imposing the triangle inequality, or None if empty."""
        (alo, ahi), (blo, bhi), D = (self.xi.lo, self.xi.hi), (self.eta.lo, self.eta.hi), self.diff
        for _ in range(3):
            alo, ahi = max(alo, D.lo - bhi, blo - D.hi, 0.0), min(ahi, bhi + D.hi)
            blo, bhi = max(blo, D.lo - ahi, alo - D.hi, 0.0), min(bhi, ahi + D.hi)
            if alo > ahi or blo > bhi:
                return None
        if not (np.isfinite(ahi) and np.isfinite(bhi)):
            raise ValueError("region is unbounded; constrain at least two of |xi|, |eta|, |xi-eta|")
        if max(0.0, alo - bhi, blo - ahi) > D.hi or ahi + bhi < D.lo:
            return None
        return Shell(alo, ahi), Shell(blo, bhi)


class InfeasibleRegion(ValueError):
    pass


@dataclass(frozen=True)
class MinResult:
    min_abs: float
    point: ResonancePoint


def _c_window(a, b, D: Shell):
    """Admissible cosine interval for the |xi-eta| shell (NaN where empty)."""
    ab2 = 2 * a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(ab2 > 0, (a * a + b * b - D.hi**2) / ab2, -1.0)
        hi = np.where(ab2 > 0, (a * a + b * b - D.lo**2) / ab2, 1.0)
    lo = np.maximum(lo, -1.0)
    hi = np.minimum(hi, 1.0)
    # degenerate a*b = 0: |xi-eta| is max(a, b), independent of c
    degenerate = ab2 == 0
    if np.any(degenerate):
        m = np.maximum(a, b)
        ok = (m >= D.lo) & (m <= D.hi)
        lo = np.where(degenerate & ~ok, np.nan, lo)
    bad = lo > hi
    return np.where(bad, np.nan, lo), np.where(bad, np.nan, hi)


def _scan(fn: str, A: Shell, B: Shell, D: Shell, n: int):
    a = np.linspace(A.lo, A.hi, n)
    b = np.linspace(B.lo, B.hi, n)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    lo, hi = _c_window(aa, bb, D)
    const, slope = _affine_parts(fn, aa, bb)
    vlo = const + slope * lo
    vhi = const + slope * hi
    crossing = (vlo * vhi) <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        c_root = np.where(slope > 0, -const / slope, lo)
    best = np.where(np.abs(vlo) <= np.abs(vhi), np.abs(vlo), np.abs(vhi))
    c_best = np.where(np.abs(vlo) <= np.abs(vhi), lo, hi)
    best = np.where(crossing, 0.0, best)
    c_best = np.where(crossing, c_root, c_best)
    best = np.where(np.isnan(lo), np.inf, best)
    i = int(np.argmin(best))  # first minimum in lexicographic (a, b) order
    ia, ib = np.unravel_index(i, best.shape)
    return float(best[ia, ib]), float(a[ia]), float(b[ib]), float(c_best[ia, ib]), a, b


def region_min_abs(fn: str, region: RegionSpec) -> MinResult:
    """Coarse scan of (|xi|, |eta|) followed by zoomed rescans around the best cell."""
    box = region.tightened()
    if box is None:
        raise InfeasibleRegion("dyadic constraints are incompatible with the triangle inequality")
    A, B = box
    n = region.resolution
    best, a0, b0, c0, a, b = _scan(fn, A, B, region.diff, n)
    if not np.isfinite(best):
        raise InfeasibleRegion("no feasible sample in region")
    for _ in range(region.zoom_rounds):
        da = (A.hi - A.lo) / 20
        db = (B.hi - B.lo) / 20
        A = Shell(max(region.xi.lo, box[0].lo, a0 - da), min(box[0].hi, a0 + da))
        B = Shell(max(region.eta.lo, box[1].lo, b0 - db), min(box[1].hi, b0 + db))
        cand = _scan(fn, A, B, region.diff, n)
        if cand[0] < best:
            best, a0, b0, c0 = cand[:4]
    c0 = float(np.clip(c0, -1.0, 1.0))
    return MinResult(best, ResonancePoint(a0, b0, c0))


# ----------------------------------------------------------------- lemma checks
#
# Index convention: |xi| ~ 2^k1, |eta| ~ 2^k, |xi - eta| ~ 2^k2, each "~" meaning the
# fattened annulus [2^(k-1), 2^(k+1)].  A missing index leaves that length free.
# The swapped Klein-Gordon cases exchange the roles of |eta| and |xi - eta|.


def _shell(k):
    return Shell.free() if k is None else Shell.annulus(k)


@dataclass(frozen=True)
class LemmaCase:
    functions: tuple
    kind: str  # "absolute": bound 1/2; "scaling": bound c0 * 2^(2*scale)
    anchor: str
    shells: object  # idx -> (xi, eta, diff) index triple
    regime_start: int | None = None


_CASES = {
    "sch-low": LemmaCase(("phi+", "phi-"), "absolute", "Schrodinger nonresonance: both |xi|, |eta| below 2^-3",
                         lambda i: (i["k1"], i["k"], None)),
    "sch-high-low": LemmaCase(("phi+", "phi-"), "scaling", "Schrodinger nonresonance: |eta| >> |xi|, |eta| > 2^7",
                              lambda i: (i["k1"], i["k"], None), 8),
    "sch-high-high": LemmaCase(("phi+", "phi-"), "scaling", "Schrodinger nonresonance: |xi| ~ |eta| >> |xi-eta|",
                               lambda i: (i["k1"], i["k"], i["k2"]), 8),
    "kg-low": LemmaCase(("psi",), "absolute", "Klein-Gordon nonresonance: |xi|, |xi-eta| below 2^-3",
                        lambda i: (i["k1"], None, i["k2"])),
    "kg-low-swapped": LemmaCase(("psi",), "absolute", "Klein-Gordon nonresonance: |xi|, |eta| below 2^-3",
                                lambda i: (i["k1"], i["k2"], None)),
    "kg-high": LemmaCase(("psi",), "scaling", "Klein-Gordon nonresonance: |xi| >> |xi-eta|, |xi| > 2^10",
                         lambda i: (i["k1"], None, i["k2"]), 11),
    "kg-high-swapped": LemmaCase(("psi",), "scaling", "Klein-Gordon nonresonance: |xi| >> |eta|, |xi| > 2^10",
                                 lambda i: (i["k1"], i["k2"], None), 11),
}
CASES = tuple(_CASES)


def default_sweep(case: str) -> list[dict]:
    """Index dictionaries; scaling cases carry `scale`, the exponent of the 2^(2*scale) bound."""
    if case == "sch-low":
        return [dict(k=k, k1=k1, k2=None) for k in range(-8, -2) for k1 in range(-8, -2)]
    if case in ("kg-low", "kg-low-swapped"):
        return [dict(k=None, k1=k1, k2=k2) for k1 in range(-8, -2) for k2 in range(-8, -2)]
    if case == "sch-high-low":
        return [dict(k=k, k1=k - 10, k2=None, scale=k) for k in range(8, 13)]
    if case == "sch-high-high":
        # rows below the regime start are reported but not asserted
        return [dict(k=k, k1=k, k2=k - 10, scale=k) for k in range(-2, 13)]
    if case in ("kg-high", "kg-high-swapped"):
        return [dict(k=None, k1=k1, k2=k1 - 10, scale=k1) for k1 in range(11, 16)]
    raise ValueError(f"unknown case {case!r}; expected one of {CASES}")


@dataclass
class LemmaRow:
    case: str
    fn: str
    k: int | None
    k1: int | None
    k2: int | None
    min_abs: float
    bound: float
    margin: float
    argmin_a: float
    argmin_b: float
    argmin_c: float
    status: str
    anchor: str
    scale: int | None = None
    normalized: float = float("nan")


@dataclass
class LemmaReport:
    case: str
    rows: list
    fitted_c0: float | None = None
    spread: float | None = None
    stable: bool | None = None

    @property
    def passed(self) -> bool:
        ok = all(r.status != "fail" for r in self.rows)
        if self.stable is not None:
            ok = ok and self.stable
        return ok


STABILITY_TOLERANCE = 0.2


def verify_lemma(case: str, sweep: list[dict] | None = None, resolution: int = 200) -> LemmaReport:
    """Per-index table of min |.| against the nonresonance lower bound.

    Scaling cases fit c0 = min over the in-regime rows of min|.| / 2^(2*scale)
    and call the sweep stable when (max - min)/(max + min) <= 0.2.
    """
    spec = _CASES.get(case)
    if spec is None:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    sweep = default_sweep(case) if sweep is None else sweep
    nan = float("nan")
    rows: list[LemmaRow] = []
    for idx in sweep:
        kx, ke, kd = spec.shells(idx)
        region = RegionSpec(xi=_shell(kx), eta=_shell(ke), diff=_shell(kd), resolution=resolution)
        for fn in spec.functions:
            base = dict(case=case, fn=fn, k=idx.get("k"), k1=idx.get("k1"), k2=idx.get("k2"),
                        anchor=spec.anchor, scale=idx.get("scale"))
            try:
                res = region_min_abs(fn, region)
            except InfeasibleRegion:
                rows.append(LemmaRow(min_abs=nan, bound=nan, margin=nan, argmin_a=nan, argmin_b=nan,
                                     argmin_c=nan, status="infeasible", **base))
                continue
            p = res.point
            row = LemmaRow(min_abs=res.min_abs, bound=nan, margin=nan, argmin_a=p.a, argmin_b=p.b,
                           argmin_c=p.c, status="pending", **base)
            if spec.kind == "absolute":
                row.bound = 0.5
                row.margin = res.min_abs - 0.5
                row.status = "pass" if row.margin >= 0 else "fail"
            else:
                row.normalized = res.min_abs / 2.0 ** (2 * row.scale)
                if row.scale < spec.regime_start:
                    row.status = "outside-regime"
            rows.append(row)
    report = LemmaReport(case, rows)
    if spec.kind == "scaling":
        fit = [r for r in rows if r.status == "pending"]
        if fit:
            vals = np.array([r.normalized for r in fit])
            report.fitted_c0 = float(vals.min())
            total = vals.max() + vals.min()
            report.spread = float((vals.max() - vals.min()) / total) if total > 0 else float("inf")
            report.stable = bool(report.fitted_c0 > 0 and report.spread <= STABILITY_TOLERANCE)
        for r in rows:
            if report.fitted_c0 is not None and r.scale is not None:
                r.bound = report.fitted_c0 * 2.0 ** (2 * r.scale)
                r.margin = r.min_abs - r.bound
            if r.status == "pending":
                r.status = "pass" if report.stable else "fail"
    return report
