"""Configuration loading, experiment orchestration and artifact output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from . import estimate_harness as eh
from . import resonance_analysis as ra
from .frequency_tools import random_annular_data
from .function_norms import build_atom, p_variation_exhaustive, _variation, v2_norm
from .kgs_solver import (
    METHODS,
    _l2_rows,
    gaussian_data,
    picard_iterate,
    residual,
    scattering_diagnostic,
    solve,
)
from .radial_spectral import inverse_values, make_grid

SCHEMA_VERSION = 1

EXPERIMENTS = {
    "resonance-verify": "minimum of the resonance functions over dyadic regions",
    "strichartz-sweep": "normalized Strichartz ratios across frequency sweeps",
    "bilinear-sweep": "bilinear restriction ratios and their log2 slopes",
    "trilinear-sweep": "trilinear pairings for the Schrodinger and Klein-Gordon nonlinearities",
    "transversality": "V_max, H_j and the curvature/transversality margins",
    "summation-check": "dyadic summation constant and its negative control",
    "solve": "time-stepped solution with mass, residual and trajectory export",
    "picard": "Picard iterates of the Duhamel map and their contraction ratios",
    "scatter-diag": "Cauchy increments of the profiles and the delta scaling of the correction",
    "vnorm-selftest": "p-variation dynamic program against exhaustive enumeration, atom checks",
}
RANDOMIZED = {"strichartz-sweep", "bilinear-sweep", "trilinear-sweep", "summation-check", "vnorm-selftest"}
PROBES = {"strichartz-sweep", "bilinear-sweep", "trilinear-sweep"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    r_max: float = 64.0
    n_points: int = 4096
    T: float = 16.0
    dt: float = 1.0 / 128
    window: float = 16.0
    trials: int = 32
    seed: int | None = None
    epsilon: float = 0.1
    out: str | None = None
    k: tuple | None = None
    k1: tuple | None = None
    k2: tuple | None = None
    case: tuple | None = None
    group: tuple | None = None
    kind: str | None = None
    pair: tuple | None = None
    flow: str | None = None
    weight: str | None = None
    delta: tuple | None = None
    width: float = 4.0
    method: str = "strang_split"
    coupling: float = 1.0
    kg_sign: int = 1
    save_every: int = 8
    m_iters: int = 6
    atom_steps: int = 0
    lengths: tuple = (64, 128, 256)
    resolution: int = 200
    residual_limit: float = 1e-4
    contraction_limit: float = 0.5
    summation_limit: float = 10.0
    export_trajectory: bool = True
    export_every: int = 4
    sequences: int = 1000

    def as_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def hash(self) -> str:
        d = self.as_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def grid(self):
        return make_grid(self.r_max, self.n_points)

    @property
    def probe_settings(self) -> eh.ProbeSettings:
        return eh.ProbeSettings(window=self.window)


LIST_KEYS = {"k", "k1", "k2", "case", "group", "pair", "delta", "lengths"}
INT_LIST_KEYS = {"k", "k1", "k2", "lengths"}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


class _StrictLoader(yaml.SafeLoader):
    pass


def _no_duplicates(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (line {key_node.start_mark.line + 1})")
        seen.add(key)
    return loader.construct_mapping(node, deep)


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _no_duplicates)


def _number(key, v, kind=float):
    if isinstance(v, bool):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    try:
        x = Fraction(str(v).strip()) if isinstance(v, str) else v
        if kind is int:
            if Fraction(x).denominator != 1:
                raise ValueError
            return int(x)
        return float(x)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ConfigError(f"{key}: expected {'an integer' if kind is int else 'a number'}, got {v!r}") from None


def parse_config(raw: dict | None) -> ExperimentConfig:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config must be a key: value mapping")
    names = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(map(str, unknown))}")
    if raw.get("experiment") is None:
        raise ConfigError("experiment required")
    values = {}
    for key, v in raw.items():
        if isinstance(v, (dict,)):
            raise ConfigError(f"{key}: nested mappings are not allowed (the config is flat)")
        if key in LIST_KEYS:
            items = v if isinstance(v, list) else [v]
            if key in INT_LIST_KEYS:
                items = [_number(key, x, int) for x in items]
            elif key == "delta":
                items = [_number(key, x) for x in items]
            else:
                items = [str(x) for x in items]
            values[key] = tuple(items)
            continue
        default = names[key].default
        if key in ("experiment", "out", "kind", "flow", "weight", "method"):
            values[key] = None if v is None else str(v)
        elif key == "seed":
            values[key] = None if v is None else _number(key, v, int)
        elif key == "export_trajectory":
            if not isinstance(v, bool):
                raise ConfigError(f"{key}: expected true or false, got {v!r}")
            values[key] = v
        elif isinstance(default, bool):
            values[key] = bool(v)
        elif isinstance(default, int):
            values[key] = _number(key, v, int)
        else:
            values[key] = _number(key, v)
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.load(path.read_text(), Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw)


def _choices(cfg_value, allowed, key):
    if cfg_value is None:
        return
    for v in cfg_value:
        if v not in allowed:
            raise ConfigError(f"{key}: unknown value {v!r}; expected one of {', '.join(allowed)}")


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    if cfg.r_max <= 0 or cfg.n_points < 16:
        raise ConfigError("grid needs r_max > 0 and n_points >= 16")
    if cfg.T <= 0 or cfg.dt <= 0:
        raise ConfigError("T and dt must be positive")
    if abs(round(cfg.T / cfg.dt) * cfg.dt - cfg.T) > 1e-9 * cfg.T:
        raise ConfigError(f"T={cfg.T} is not a multiple of dt={cfg.dt}")
    if cfg.window <= 1:
        raise ConfigError("window must exceed one natural time")
    if cfg.trials < 1 or cfg.sequences < 1:
        raise ConfigError("trials and sequences must be positive")
    if not (0 < cfg.epsilon <= 0.25):
        raise ConfigError("epsilon must lie in (0, 1/4]")
    if cfg.kg_sign not in (1, -1):
        raise ConfigError("kg_sign must be 1 or -1")
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}")
    if cfg.save_every < 1 or cfg.export_every < 1 or cfg.m_iters < 1:
        raise ConfigError("save_every, export_every and m_iters must be positive")
    if cfg.delta is not None and any(d < 0 for d in cfg.delta):
        raise ConfigError("delta must be nonnegative")
    if cfg.experiment in RANDOMIZED and cfg.seed is None:
        raise ConfigError(f"seed required for randomized experiment {cfg.experiment}")
    exp = cfg.experiment
    if exp == "resonance-verify":
        _choices(cfg.case, ra.CASES, "case")
    elif exp in ("bilinear-sweep", "transversality"):
        _choices(cfg.case, eh.BILINEAR_CASES, "case")
    elif exp == "trilinear-sweep":
        _choices(cfg.group, tuple(eh.TRILINEAR_GROUPS) + ("incompatible",), "group")
        if cfg.kind not in (None, "schrodinger", "kg"):
            raise ConfigError("kind must be schrodinger or kg")
    elif exp == "strichartz-sweep":
        if cfg.flow not in (None, "schrodinger", "kg+", "kg-"):
            raise ConfigError("flow must be schrodinger, kg+ or kg-")
        if cfg.weight not in (None, "schrodinger", "wave"):
            raise ConfigError("weight must be schrodinger or wave")
        for p in cfg.pair or ():
            _parse_pair(p, "schrodinger")
    if exp in PROBES:
        g = cfg.grid
        limit = g.nyquist_octave()
        for key in ("k", "k1", "k2"):
            for k in getattr(cfg, key) or ():
                if k > limit:
                    raise ConfigError(
                        f"{key}={k} exceeds the Nyquist octave {limit} of the grid "
                        f"(r_max={cfg.r_max}, n_points={cfg.n_points}, xi_max={g.xi_max:.4g})")


def _parse_pair(text: str, family: str) -> eh.LebesguePair:
    parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"pair {text!r}: expected 'p,q'")
    try:
        return eh.LebesguePair(parts[0], parts[1], family)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"pair {text!r}: {exc}") from None


# ---------------------------------------------------------------- results

@dataclass
class ExperimentResult:
    rows: list
    columns: list
    passed: bool
    summary: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # extra artifacts: name -> bytes


def _parallel(tasks: list[tuple[tuple, Callable]], threads: int) -> list:
    """Run (sort_key, thunk) pairs; results come back ordered by sort_key."""
    keyed = sorted(tasks, key=lambda t: _sortable(t[0]))
    if threads <= 1:
        return [fn() for _, fn in keyed]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn) for _, fn in keyed]
        return [f.result() for f in futures]


def _sortable(key):
    return tuple((0, "") if v is None else (1, v) if isinstance(v, str) else (2, v) for v in key)


def _product(cfg, defaults=(None, None, None)):
    ks = [getattr(cfg, name) or ((d,) if d is not None else (None,)) for name, d in zip(("k", "k1", "k2"), defaults)]
    return [dict(k=a, k1=b, k2=c) for a, b, c in itertools.product(*ks)]


def _custom_given(cfg) -> bool:
    return any(getattr(cfg, n) for n in ("k", "k1", "k2"))


# ---------------------------------------------------------------- experiments

RESONANCE_COLUMNS = ["case", "anchor", "fn", "k", "k1", "k2", "scale", "min_abs", "bound", "margin",
                     "normalized", "argmin_a", "argmin_b", "argmin_c", "status"]


def _resonance_scale(case, idx):
    if case in ("sch-high-low", "sch-high-high"):
        return idx["k"]
    if case in ("kg-high", "kg-high-swapped"):
        return idx["k1"]
    return None


def run_resonance(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    cases = cfg.case or ra.CASES

    def job(case):
        sweep = None
        if _custom_given(cfg):
            sweep = [dict(i, scale=_resonance_scale(case, i)) for i in _product(cfg)]
        return ra.verify_lemma(case, sweep, cfg.resolution)

    reports = _parallel([((c,), (lambda c=c: job(c))) for c in cases], threads)
    rows = [dataclasses.asdict(r) for rep in reports for r in rep.rows]
    fits = {rep.case: dict(fitted_c0=rep.fitted_c0, spread=rep.spread, stable=rep.stable, passed=rep.passed)
            for rep in reports}
    passed = all(rep.passed for rep in reports)
    return ExperimentResult(rows, RESONANCE_COLUMNS, passed, dict(cases=fits))


STRICHARTZ_COLUMNS = ["anchor", "flow", "weight", "pair", "k", "sigma", "raw", "ratio", "trials", "seed",
                      "admissible", "reason", "reflective", "dt", "n_t", "r_max", "n_points", "status"]


def run_strichartz(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    if cfg.pair or cfg.flow or cfg.weight or cfg.k:
        flow = cfg.flow or "schrodinger"
        weight = cfg.weight or ("schrodinger" if flow == "schrodinger" else "wave")
        pairs = cfg.pair or [f"{p},{q}" for p, q in eh.REFERENCE_SCHRODINGER]
        ks = list(cfg.k or range(-4, 7))
        plan = [(_parse_pair(p, weight), flow, weight, ks) for p in pairs]
    else:
        plan = eh.reference_sweeps()
    st = cfg.probe_settings
    tasks = []
    for pi, (pair, flow, weight, ks) in enumerate(plan):
        for k in ks:
            tasks.append(((pi, k), lambda pair=pair, flow=flow, weight=weight, k=k:
                          eh.strichartz_ratio(k, pair, flow, cfg.trials, cfg.seed, weight, st)))
    results = _parallel(tasks, threads)
    rows, sweeps, passed = [], [], True
    at = 0
    for pair, flow, weight, ks in plan:
        chunk = results[at:at + len(ks)]
        at += len(ks)
        ratios = [r["ratio"] for r in chunk]
        sp = eh.spread(ratios)
        if any(r["reflective"] for r in chunk):
            status = "reflective"
        elif not chunk[0]["admissible"]:
            status = "not-asserted"
        else:
            status = "pass" if sp <= 4.0 else "fail"
        passed &= status in ("pass", "not-asserted")
        for r in chunk:
            r["status"] = status
            r["anchor"] = f"strichartz:{flow}:{weight}-weight"
        rows.extend(chunk)
        sweeps.append(dict(pair=pair.label, flow=flow, weight=weight, spread=sp,
                           max_normalized_ratio=max(ratios), status=status))
    summary = dict(sweeps=sweeps, max_normalized_ratio=max(r["ratio"] for r in rows))
    return ExperimentResult(rows, STRICHARTZ_COLUMNS, passed, summary)


BILINEAR_COLUMNS = ["case", "k", "k1", "k2", "raw", "coefficient", "normalized", "trials", "seed",
                    "reflective", "dt", "n_t", "r_max", "n_points", "status"]


def run_bilinear(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    cases = cfg.case or eh.BILINEAR_CASES
    st = cfg.probe_settings
    plans = []
    for case in cases:
        if _custom_given(cfg):
            sweep = _product(cfg)
            varying = [n for n in ("k", "k1", "k2") if len(getattr(cfg, n) or ()) > 1]
            key = varying[0] if varying else ("k1" if case != eh.BILINEAR_CASES[1] else "k")
        else:
            key, sweep = eh.DEFAULT_BILINEAR[case]
        plans.append((case, key, sweep))
    tasks = []
    for ci, (case, key, sweep) in enumerate(plans):
        for si, idx in enumerate(sweep):
            tasks.append(((ci, si), lambda case=case, idx=idx:
                          eh.bilinear_ratio(case, trials=cfg.trials, seed=cfg.seed, settings=st, **idx)))
    results = _parallel(tasks, threads)
    rows, fits, passed, at = [], [], True, 0
    for case, key, sweep in plans:
        chunk = results[at:at + len(sweep)]
        at += len(sweep)
        if len(chunk) >= 2:
            x = [r[key] for r in chunk]
            slope = eh.fit_slope(x, [r["normalized"] for r in chunk])
            control = eh.fit_slope(x, [r["raw"] for r in chunk])
        else:
            slope = control = float("nan")
        ok = abs(slope) <= eh.SLOPE_BAND and abs(control) > eh.SLOPE_BAND
        status = "reflective" if any(r["reflective"] for r in chunk) else ("pass" if ok else "fail")
        passed &= status == "pass"
        for r in chunk:
            r["status"] = status
        rows.extend(chunk)
        fits.append(dict(case=case, sweep_key=key, slope=slope, control_slope=control, status=status))
    summary = dict(slope={f["case"]: f["slope"] for f in fits}, fits=fits,
                   max_normalized_ratio=max(r["normalized"] for r in rows))
    return ExperimentResult(rows, BILINEAR_COLUMNS, passed, summary)


TRILINEAR_COLUMNS = ["group", "kind", "k", "k1", "k2", "raw", "coefficient", "normalized", "compatible",
                     "atom_steps", "trials", "seed", "reflective", "dt", "n_t", "r_max", "n_points", "status"]


def run_trilinear(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    st = cfg.probe_settings
    if _custom_given(cfg):
        kind = cfg.kind or "schrodinger"
        groups = {"custom": (kind, [(i["k"], i["k1"], i["k2"]) for i in _product(cfg, (0, 0, 0))])}
    else:
        names = cfg.group or tuple(eh.TRILINEAR_GROUPS) + ("incompatible",)
        groups = {}
        for name in names:
            if name == "incompatible":
                groups[name] = ("both", list(eh.INCOMPATIBLE_TRIPLES))
            else:
                groups[name] = eh.TRILINEAR_GROUPS[name]

    def cell(kind, t):
        if kind == "schrodinger":
            return eh.trilinear_schrodinger(*t, cfg.trials, cfg.seed, cfg.epsilon, atom_steps=cfg.atom_steps,
                                            settings=st)
        return eh.trilinear_kg(*t, cfg.trials, cfg.seed, st)

    tasks = []
    for gi, (name, (kind, triples)) in enumerate(groups.items()):
        kinds = ("schrodinger", "kg") if kind == "both" else (kind,)
        for ti, t in enumerate(triples):
            for ki, kd in enumerate(kinds):
                tasks.append(((gi, ti, ki), lambda kd=kd, t=t: cell(kd, t)))
    results = _parallel(tasks, threads)
    rows, groups_out, passed, at = [], [], True, 0
    for name, (kind, triples) in groups.items():
        n = len(triples) * (2 if kind == "both" else 1)
        chunk = results[at:at + n]
        at += n
        for r in chunk:
            r["group"] = name
        if name == "incompatible":
            for r in chunk:
                r["status"] = "pass" if (not r["compatible"] and r["raw"] <= eh.INCOMPATIBLE_LIMIT) else "fail"
            status = "pass" if all(r["status"] == "pass" for r in chunk) else "fail"
            sp = None
        else:
            sp = eh.spread([r["normalized"] for r in chunk])
            status = "reflective" if any(r["reflective"] for r in chunk) else (
                "pass" if sp <= eh.GROUP_SPREAD else "fail")
            for r in chunk:
                r["status"] = status
        passed &= status == "pass"
        rows.extend(chunk)
        groups_out.append(dict(group=name, spread=sp, status=status,
                               max_normalized_ratio=max(r["normalized"] for r in chunk)))
    summary = dict(groups=groups_out, max_normalized_ratio=max(r["normalized"] for r in rows))
    return ExperimentResult(rows, TRILINEAR_COLUMNS, passed, summary)


TRANSVERSALITY_COLUMNS = ["case", "k", "k1", "k2", "lambda1", "lambda2", "phase1", "phase2", "v_max",
                          "predicted_v", "v_normalized", "h1", "h2", "d0", "a1_constant", "a2_margin",
                          "a1_ok", "a2_ok", "status"]


def run_transversality(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    cases = cfg.case or eh.BILINEAR_CASES

    def job(case):
        sweep = eh.DEFAULT_TRANSVERSALITY[case]
        if _custom_given(cfg):
            sweep = [{k: v for k, v in i.items() if v is not None} for i in _product(cfg)]
        try:
            return eh.transversality_sweep(case, sweep)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    reports = _parallel([((c,), (lambda c=c: job(c))) for c in cases], threads)
    rows = [r for rep in reports for r in rep.rows]
    passed = all(rep.summary["status"] == "pass" for rep in reports)
    return ExperimentResult(rows, TRANSVERSALITY_COLUMNS, passed, dict(cases=[rep.summary for rep in reports]))


SUMMATION_COLUMNS = ["kind", "delta", "length", "n_triples", "index_lo", "index_hi", "trials", "seed",
                     "value", "normalized", "status"]


def run_summation(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    deltas = cfg.delta or (0.05, 0.1)
    rows = []
    passed = True
    for d in deltas:
        r = eh.summation_check(d, trials=cfg.trials, seed=cfg.seed)
        ok = r["constant"] <= cfg.summation_limit
        passed &= ok
        rows.append(dict(kind="random", delta=d, length=None, n_triples=r["n_triples"], index_lo=r["index_lo"],
                         index_hi=r["index_hi"], trials=cfg.trials, seed=cfg.seed, value=r["constant"],
                         normalized=r["constant"], status="pass" if ok else "fail"))
    growth = {}
    for d, want_growth in ((0.0, True), (0.1, False)):
        g = eh.summation_growth(tuple(cfg.lengths), d)
        ok = g["normalized_exponent"] >= 0.4 if want_growth else g["normalized_exponent"] < 0
        passed &= ok
        growth[str(d)] = dict(normalized_exponent=g["normalized_exponent"], raw_exponent=g["raw_exponent"])
        for r in g["rows"]:
            rows.append(dict(kind="constant", delta=d, length=r["length"], n_triples=None, index_lo=0,
                             index_hi=r["length"] - 1, trials=None, seed=None, value=r["sum"],
                             normalized=r["normalized"], status="pass" if ok else "fail"))
    summary = dict(constant={str(r["delta"]): r["value"] for r in rows if r["kind"] == "random"},
                   growth=growth, slope=growth["0.0"]["normalized_exponent"])
    return ExperimentResult(rows, SUMMATION_COLUMNS, passed, summary)


SOLVE_COLUMNS = ["method", "delta", "width", "T", "dt", "r_max", "n_points", "save_every", "mass_drift",
                 "residual", "aborted", "status"]
DIAGNOSTIC_COLUMNS = ["t", "mass", "u_norm", "N_norm"]
MASS_LIMIT = 1e-8


def _data(cfg, delta):
    g = cfg.grid
    return gaussian_data(g, delta, cfg.width), gaussian_data(g, delta, cfg.width)


def export_trajectory(traj, every: int) -> tuple[bytes, bytes]:
    """Binary snapshots (float64 little endian, [snapshot][u, N][node][re, im]) plus JSON metadata."""
    idx = list(range(0, len(traj), every))
    if idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    u = inverse_values(traj.u_coeffs[idx], traj.grid)
    N = inverse_values(traj.N_coeffs[idx], traj.grid)
    block = np.stack([u, N], axis=1)                         # (s, 2, n) complex
    data = np.stack([block.real, block.imag], axis=-1).astype("<f8")
    meta = dict(schema_version=SCHEMA_VERSION, layout="snapshot, field (u, N), node, (re, im)", dtype="<f8",
                n_snapshots=len(idx), n_points=traj.grid.n_points, r_max=traj.grid.r_max,
                times=[float(traj.times[i]) for i in idx], dt=traj.dt, method=traj.method,
                nodes="r_i = i * r_max / (n_points + 1), i = 1..n_points")
    return data.tobytes(), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode()


def run_solve(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    delta = (cfg.delta or (0.01,))[0]
    u0, N0 = _data(cfg, delta)
    traj = solve(u0, N0, cfg.T, cfg.dt, cfg.method, cfg.coupling, cfg.kg_sign, cfg.save_every)
    res = residual(traj) if len(traj) >= 3 else float("inf")
    ok = traj.aborted is None and traj.mass_drift <= MASS_LIMIT and res <= cfg.residual_limit
    row = dict(method=cfg.method, delta=delta, width=cfg.width, T=cfg.T, dt=cfg.dt, r_max=cfg.r_max,
               n_points=cfg.n_points, save_every=cfg.save_every, mass_drift=traj.mass_drift, residual=res,
               aborted=traj.aborted, status="pass" if ok else "fail")
    diag = [dict(t=float(t), mass=float(m), u_norm=float(a), N_norm=float(b)) for t, m, a, b in
            zip(traj.times, traj.mass, _l2_rows(traj.u_coeffs, traj.grid), _l2_rows(traj.N_coeffs, traj.grid))]
    files = {"diagnostics.csv": _csv_bytes(diag, DIAGNOSTIC_COLUMNS)}
    if cfg.export_trajectory:
        blob, meta = export_trajectory(traj, cfg.export_every)
        files["trajectory.bin"] = blob
        files["trajectory.json"] = meta
    summary = dict(mass_drift=traj.mass_drift, residual=res, aborted=traj.aborted, final_time=float(traj.times[-1]))
    return ExperimentResult([row], SOLVE_COLUMNS, ok, summary, files)


PICARD_COLUMNS = ["iteration", "difference", "ratio", "status"]


def run_picard(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    delta = (cfg.delta or (0.01,))[0]
    u0, N0 = _data(cfg, delta)
    pr = picard_iterate(u0, N0, cfg.T, cfg.dt, cfg.m_iters, cfg.coupling, cfg.kg_sign)
    rows, passed = [], True
    for i, d in enumerate(pr.differences):
        ratio = d / pr.differences[i - 1] if i > 0 and pr.differences[i - 1] > 0 else None
        ok = ratio is None or ratio <= cfg.contraction_limit or d < 1e-14 * delta
        passed &= ok
        rows.append(dict(iteration=i + 1, difference=d, ratio=ratio, status="pass" if ok else "fail"))
    stepped = solve(u0, N0, cfg.T, cfg.dt, cfg.method, cfg.coupling, cfg.kg_sign, save_every=int(round(cfg.T / cfg.dt)))
    last = pr.iterates[-1]
    g = cfg.grid
    gap = float(np.sqrt(np.sum(np.abs(last.u_coeffs[-1] - stepped.u_coeffs[-1]) ** 2 * g.dual_weights))
                + np.sqrt(np.sum(np.abs(last.N_coeffs[-1] - stepped.N_coeffs[-1]) ** 2 * g.dual_weights)))
    summary = dict(differences=pr.differences, ratios=pr.ratios, terminal_gap_to_solver=gap)
    return ExperimentResult(rows, PICARD_COLUMNS, passed, summary)


SCATTER_COLUMNS = ["delta", "t", "t2", "u_increment", "N_increment", "correction", "status"]


def run_scatter(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    deltas = cfg.delta or (0.02, 0.01, 0.005)
    save = max(1, int(round(0.25 / cfg.dt)))

    def job(d):
        u0, N0 = _data(cfg, d)
        traj = solve(u0, N0, cfg.T, cfg.dt, cfg.method, cfg.coupling, cfg.kg_sign, save_every=save)
        return d, traj.aborted, scattering_diagnostic(traj, cfg.epsilon)

    results = _parallel([((d,), (lambda d=d: job(d))) for d in deltas], threads)
    rows, passed, used, corrections = [], True, [], []
    for d, aborted, rep in results:  # ordered by delta, not by config order
        ok = aborted is None and rep.monotone
        passed &= ok
        used.append(d)
        corrections.append(rep.correction)
        for p in rep.pairs:
            rows.append(dict(delta=d, correction=rep.correction, status="pass" if ok else "fail", **p))
    alpha = None
    if len(deltas) >= 2 and all(c > 0 for c in corrections):
        alpha = float(np.polyfit(np.log(used), np.log(corrections), 1)[0])
        passed &= 1.8 <= alpha <= 2.2
    else:
        passed = False
    return ExperimentResult(rows, SCATTER_COLUMNS, passed, dict(alpha=alpha, slope=alpha))


VNORM_COLUMNS = ["check", "n_cases", "max_error", "status"]


def run_vnorm(cfg: ExperimentConfig, threads: int) -> ExperimentResult:
    rng = np.random.default_rng([cfg.seed, 7])
    # integer sequences make both sums exact, so agreement must be bitwise
    worst_int = 0.0
    worst_float = 0.0
    for _ in range(cfg.sequences):
        n = int(rng.integers(1, 13))
        x = rng.integers(-6, 7, size=n).astype(float)
        dp = _variation(x[:, None], np.ones(1), 2.0)
        ex = p_variation_exhaustive(x, 2.0)
        worst_int = max(worst_int, abs(dp - ex))
        y = rng.standard_normal((n, 3))
        p = float(rng.choice([1.0, 2.0, 3.0]))
        dp = _variation(y, np.ones(3), p)
        ex = p_variation_exhaustive(y, p)
        worst_float = max(worst_float, abs(dp - ex) / max(ex, 1e-300))
    g = make_grid(32.0, 255)
    times = np.linspace(-1.0, 1.0, 65)
    single_err = 0.0
    atom_max = 0.0
    n_atoms = 20
    for i in range(n_atoms):
        steps = int(rng.integers(1, 6))
        jumps = np.sort(rng.choice(times[1:-1], size=steps, replace=False))
        flow = ("schrodinger", "kg+")[i % 2]
        pieces = [random_annular_data(g, 0, rng, radius=4.0) * 0.0]
        pieces += [random_annular_data(g, 0, rng, radius=4.0) for _ in range(steps)]
        F, _ = build_atom(list(jumps), pieces, flow, times)
        atom_max = max(atom_max, v2_norm(F, flow))
        one, _ = build_atom([jumps[0]], pieces[:2], flow, times)
        single_err = max(single_err, abs(v2_norm(one, flow) - 1.0))
    rows = [
        dict(check="dp-vs-exhaustive-integer", n_cases=cfg.sequences, max_error=worst_int,
             status="pass" if worst_int == 0 else "fail"),
        dict(check="dp-vs-exhaustive-float", n_cases=cfg.sequences, max_error=worst_float,
             status="pass" if worst_float <= 1e-12 else "fail"),
        dict(check="single-atom-equals-jump", n_cases=n_atoms, max_error=single_err,
             status="pass" if single_err <= 1e-10 else "fail"),
        dict(check="atom-v2-at-most-2", n_cases=n_atoms, max_error=max(0.0, atom_max - 2.0),
             status="pass" if atom_max <= 2.0 + 1e-12 else "fail"),
    ]
    passed = all(r["status"] == "pass" for r in rows)
    return ExperimentResult(rows, VNORM_COLUMNS, passed, dict(max_atom_v2=atom_max))


RUNNERS = {
    "resonance-verify": run_resonance,
    "strichartz-sweep": run_strichartz,
    "bilinear-sweep": run_bilinear,
    "trilinear-sweep": run_trilinear,
    "transversality": run_transversality,
    "summation-check": run_summation,
    "solve": run_solve,
    "picard": run_picard,
    "scatter-diag": run_scatter,
    "vnorm-selftest": run_vnorm,
}


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _csv_bytes(rows: list[dict], columns: list[str]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue().encode()


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _clean(o):
    if isinstance(o, float) and (math.isnan(o) or math.isinf(o)):
        return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.floating):
        return _clean(float(o))
    return o


@dataclass
class RunOutcome:
    status: int
    out_dir: Path
    result: ExperimentResult


def run(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> RunOutcome:
    """Execute the experiment and write <experiment>.csv, summary.json, manifest.json, timestamp.json."""
    out = Path(out_dir or cfg.out or f"kgslab-out/{cfg.experiment}")
    out.mkdir(parents=True, exist_ok=True)
    result = RUNNERS[cfg.experiment](cfg, max(1, int(threads)))
    files = {f"{cfg.experiment}.csv": _csv_bytes(result.rows, result.columns)}
    files.update(result.files)
    summary = dict(
        schema_version=SCHEMA_VERSION,
        experiment=cfg.experiment,
        params=cfg.as_dict() | {"out": None},
        max_normalized_ratio=result.summary.get("max_normalized_ratio"),
        slope=result.summary.get("slope"),
        passed=bool(result.passed),
        details={k: v for k, v in result.summary.items() if k not in ("max_normalized_ratio", "slope")},
    )
    files["summary.json"] = (json.dumps(_clean(summary), indent=2, sort_keys=True, default=_json_default)
                             + "\n").encode()
    manifest = dict(
        schema_version=SCHEMA_VERSION,
        experiment=cfg.experiment,
        config_hash=cfg.hash(),
        code_version=__version__,
        seed=cfg.seed,
        files={name: hashlib.sha256(blob).hexdigest() for name, blob in sorted(files.items())},
    )
    files["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    for name, blob in files.items():
        (out / name).write_bytes(blob)
    stamp = dict(started_utc=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    (out / "timestamp.json").write_text(json.dumps(stamp) + "\n")
    return RunOutcome(0 if result.passed else 1, out, result)
