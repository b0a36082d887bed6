"""Reproducible experiment driver.

Usage::

    percolab run CONFIG.json [--workers N] [--assert] [--out DIR]
    percolab list

A config is one JSON object::

    {"experiment": "selfdual", "seed": 1, "L": [16, 64], "n_samples": 10000}

Every run writes ``report.json`` (top-level keys ``config``, ``estimates``,
``curves``, ``meta``) and one CSV per curve into the output directory, chosen
from ``--out``, then ``$PERCOLAB_OUTPUT_DIR``, then ``output_dir`` in the
config, then ``./percolab_out``.

Exit codes: 0 success, 1 estimator failure, 2 invalid config or unwritable
output directory, 3 a built-in acceptance check failed under ``--assert``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__, estimators as est, parallel, twod, variants
from .lattice import KINDS, LatticeError, LatticeSpec
from .sampling import MODES

ENV_OUTPUT = "PERCOLAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "percolab_out"
TOP_LEVEL = ("experiment", "seed", "lattice", "mode", "n_samples", "p", "L", "lambda", "x", "delta",
             "params", "output_dir")
EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_ASSERT = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid config; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# --------------------------------------------------------------------------
# outcome of one experiment
# --------------------------------------------------------------------------

@dataclass
class Curve:
    name: str
    columns: list
    rows: list


@dataclass
class Outcome:
    estimates: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    samples: int = 0

    def add(self, e: est.EstimateWithError, **extra) -> None:
        rec = e.to_record()
        rec.update(extra)
        self.estimates.append(rec)
        self.samples += int(e.n_samples)

    def check(self, name: str, passed: bool, **detail) -> None:
        self.checks.append({"name": name, "passed": bool(passed), **detail})


def _within(name, value, target, tol) -> dict:
    return {"quantity": name, "value": value, "target": target, "tolerance": tol}


# --------------------------------------------------------------------------
# validation helpers
# --------------------------------------------------------------------------

def _number(name, v, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"must be a finite number, got {v!r}")
    if v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(name, f"must lie in {lb}{lo:g}, {hi:g}{rb}, got {v!r}")
    return float(v)


def _integer(name, v, lo=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(name, f"must be >= {lo}, got {v!r}")
    return int(v)


def _grid(name, v, check) -> list:
    items = v if isinstance(v, list) else [v]
    if not items:
        raise ConfigError(name, "grid must be nonempty")
    return [check(name, x) for x in items]


def _prob(name, v):
    return _number(name, v, 0.0, 1.0)


def _open_unit(name, v):
    return _number(name, v, 0.0, 1.0, lo_open=True, hi_open=True)


def _nonneg(name, v):
    return _number(name, v, 0.0)


def _size(name, v):
    return _integer(name, v, 1)


def _choice(options):
    def check(name, v):
        if v not in options:
            raise ConfigError(name, f"must be one of {list(options)}, got {v!r}")
        return v
    return check


def _optional(check):
    def wrapped(name, v):
        return None if v is None else check(name, v)
    return wrapped


def _bool(name, v):
    if not isinstance(v, bool):
        raise ConfigError(name, f"must be true or false, got {v!r}")
    return v


def _vector_list(name, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(name, "must be a nonempty list of integer vectors")
    out = []
    for d in v:
        if not (isinstance(d, list) and d and all(isinstance(c, int) and not isinstance(c, bool) for c in d)
                and any(d)):
            raise ConfigError(name, f"bad direction {d!r}")
        out.append(tuple(d))
    return out


def _float_grid(check):
    def wrapped(name, v):
        return _grid(name, v, check)
    return wrapped


def _exponents(name, v):
    if not isinstance(v, dict):
        raise ConfigError(name, "must be an object of exponent values")
    allowed = est.ExponentSet.__dataclass_fields__
    for k, x in v.items():
        if k not in allowed:
            raise ConfigError(f"{name}.{k}", f"unknown exponent; expected one of {list(allowed)}")
        _number(f"{name}.{k}", x)
    return v


def _lattice(name, v):
    if isinstance(v, str):
        v = {"kind": v}
    if not isinstance(v, dict):
        raise ConfigError(name, "must be a lattice kind or an object with 'kind'")
    allowed = ("kind", "d", "arity", "boundary", "Ly")
    for k in v:
        if k not in allowed:
            raise ConfigError(f"{name}.{k}", f"unknown lattice key; expected one of {list(allowed)}")
    if v.get("kind") not in KINDS:
        raise ConfigError(f"{name}.kind", f"must be one of {list(KINDS)}, got {v.get('kind')!r}")
    try:
        LatticeSpec(L=8, **v)
    except (LatticeError, TypeError) as exc:
        raise ConfigError(name, str(exc)) from None
    return dict(v)


FIELD_CHECKS = {
    "lattice": _lattice,
    "mode": _choice(MODES),
    "n_samples": _size,
    "p": _float_grid(_prob),
    "L": _float_grid(_size),
    "lambda": _float_grid(_nonneg),
    "x": _float_grid(_open_unit),
    "delta": _float_grid(_open_unit),
}
FIELD_DOCS = {
    "lattice": "lattice kind or {kind, d, arity, boundary, Ly}",
    "mode": "site or bond",
    "n_samples": "number of independent samples (runs, seeds, paths)",
    "p": "occupation probability or grid, in [0, 1]",
    "L": "linear size or grid of sizes",
    "lambda": "infection rate or grid, >= 0",
    "x": "Cardy arc parameter or grid, in (0, 1)",
    "delta": "mesh or grid of meshes, in (0, 1)",
}


# --------------------------------------------------------------------------
# experiment registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Param:
    default: object
    check: object
    doc: str


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    fields: dict
    params: dict
    runner: object

    def schema(self) -> dict:
        return {
            "summary": self.summary,
            "fields": {k: {"default": d, "doc": FIELD_DOCS[k]} for k, d in self.fields.items()},
            "params": {k: {"default": p.default, "doc": p.doc} for k, p in self.params.items()},
        }


REGISTRY: dict[str, Experiment] = {}


def experiment(name, summary, fields, params=None):
    def register(func):
        if name in REGISTRY:
            raise RuntimeError(f"duplicate experiment {name!r}")
        REGISTRY[name] = Experiment(name, summary, fields, params or {}, func)
        return func
    return register


def list_experiments() -> dict:
    """Catalog of experiments and their parameter schemas, sorted by name."""
    return {name: REGISTRY[name].schema() for name in sorted(REGISTRY)}


def _spec(cfg, L) -> LatticeSpec:
    return LatticeSpec(L=int(L), **cfg["lattice"])


def _tol(cfg, default):
    t = cfg["params"].get("tolerance")
    return default if t is None else t


TOLERANCE = Param(None, _optional(lambda n, v: _number(n, v, 0.0)), "acceptance tolerance override")


# ---------------------------------------------------------------- estimators

def _analytic_chi(spec: LatticeSpec, p: float):
    if spec.kind == "hypercubic" and spec.d == 1 and p < 1:
        return (1 + p) / (1 - p), "relative", 0.05
    if spec.kind == "tree" and spec.arity * p < 1:
        return 1.0 / (1 - spec.arity * p), "sigma", 3.0
    return None


@experiment("theta", "centre-to-boundary connection probability (theta proxy)",
            {"lattice": {"kind": "square"}, "mode": "bond", "p": [0.5], "L": [64], "n_samples": 1000})
def run_theta(cfg, out, outdir):
    rows = []
    for L in cfg["L"]:
        for p in cfg["p"]:
            e = est.estimate_theta_proxy(_spec(cfg, L), p, n_samples=cfg["n_samples"], seed=cfg["seed"],
                                         mode=cfg["mode"])
            out.add(e, L=L, p=p)
            rows.append([L, p, e.value, e.stderr])
    out.curves.append(Curve("theta", ["L", "p", "theta", "stderr"], rows))


@experiment("chi", "mean size of the centre cluster",
            {"lattice": {"kind": "square"}, "mode": "bond", "p": [0.3], "L": [64], "n_samples": 1000},
            {"finite_only": Param(False, _bool, "drop samples whose centre cluster touches the boundary")})
def run_chi(cfg, out, outdir):
    rows = []
    for L in cfg["L"]:
        spec = _spec(cfg, L)
        for p in cfg["p"]:
            e = est.estimate_chi(spec, p, n_samples=cfg["n_samples"], seed=cfg["seed"],
                                 finite_only=cfg["params"]["finite_only"], mode=cfg["mode"])
            out.add(e, L=L, p=p)
            rows.append([L, p, e.value, e.stderr])
            ref = _analytic_chi(spec, p) if cfg["mode"] == "bond" else None
            if ref:
                target, kind, tol = ref
                ok = abs(e.value / target - 1) <= tol if kind == "relative" else abs(e.z(target)) <= tol
                out.check(f"chi_L{L}_p{p:g}", ok, value=e.value, target=target, tolerance=tol, kind=kind)
    out.curves.append(Curve("chi", ["L", "p", "chi", "stderr"], rows))


def _pc_target(spec, mode):
    if spec.kind == "bowtie" and mode == "bond":
        return est.bowtie_root(), 0.02
    ref = est.EXACT_PC.get((spec.kind, mode))
    return (ref, 0.01) if ref is not None else (None, None)


@experiment("pc", "critical point from crossing-curve 1/2-points and finite-size extrapolation",
            {"lattice": {"kind": "square"}, "mode": "bond", "L": [32, 64, 128, 256], "n_samples": 1000},
            {"n_boot": Param(est.N_BOOT, _size, "bootstrap resamples"), "tolerance": TOLERANCE})
def run_pc(cfg, out, outdir):
    spec = _spec(cfg, cfg["L"][0])
    r = est.estimate_pc(spec, cfg["L"], cfg["n_samples"], cfg["seed"], cfg["mode"],
                        n_boot=cfg["params"]["n_boot"])
    out.add(r.estimate, nu_fit=r.nu, amplitude=r.amplitude)
    out.curves.append(Curve("pc_by_L", ["L", "p_L", "stderr"],
                            [[L, float(a), float(b)] for L, a, b in zip(r.sizes, r.p_L, r.p_L_stderr)]))
    target, tol = _pc_target(spec, cfg["mode"])
    if target is not None:
        tol = _tol(cfg, tol)
        out.check("pc", abs(r.value - target) <= tol, **_within("pc", r.value, target, tol))


@experiment("duality", "residual pc(L) + pc(partner) - 1 for matching pairs",
            {"lattice": {"kind": "square"}, "mode": "bond", "L": [32, 64, 128], "n_samples": 1000},
            {"tolerance": TOLERANCE})
def run_duality(cfg, out, outdir):
    r = est.check_duality(_spec(cfg, cfg["L"][0]), cfg["L"], cfg["n_samples"], cfg["seed"], cfg["mode"])
    out.add(r.residual)
    out.add(r.primary.estimate)
    out.add(r.partner.estimate)
    out.curves.append(Curve("duality_by_L", ["L", "residual", "stderr"],
                            [[row["L"], row["residual"], row["stderr"]] for row in r.per_L]))
    tol = _tol(cfg, 0.02)
    out.check("duality", abs(r.residual.value) <= tol, **_within("residual", r.residual.value, 0.0, tol))


def _tail_kind(spec, mode, p):
    pc = est.reference_pc(spec, mode)
    if pc is None:
        raise ConfigError("params.kind", "no reference threshold for this lattice; set kind explicitly")
    if math.isclose(p, pc, abs_tol=1e-9):
        return "critical_power"
    return "subcritical_exponential" if p < pc else "supercritical_stretched"


@experiment("tail", "cluster-size tail fit (exponential, stretched exponential or power law)",
            {"lattice": {"kind": "square"}, "mode": "bond", "p": [0.7], "L": [256], "n_samples": 4000},
            {"kind": Param(None, _optional(_choice(est.TAIL_MODES)), "tail law; inferred from p when null"),
             "n_min": Param(None, _optional(lambda n, v: _number(n, v, 1.0)), "smallest fitted size"),
             "n_max": Param(None, _optional(lambda n, v: _number(n, v, 1.0)), "largest fitted size"),
             "margin": Param(0.25, lambda n, v: _number(n, v, 0.0, 0.5, hi_open=True),
                             "central-region margin for the critical law"),
             "tolerance": TOLERANCE})
def run_tail(cfg, out, outdir):
    prm = cfg["params"]
    rows = []
    for L in cfg["L"]:
        spec = _spec(cfg, L)
        for p in cfg["p"]:
            kind = prm["kind"] or _tail_kind(spec, cfg["mode"], p)
            if kind == "critical_power":
                batches = est.bulk_size_batches(spec, p, cfg["n_samples"], cfg["seed"], cfg["mode"], prm["margin"])
                n_min, n_max = prm["n_min"] or 20, prm["n_max"] or 1e4
            else:
                batches = est.cluster_histogram_batches(spec, p, cfg["n_samples"], cfg["seed"], cfg["mode"],
                                                        exclude="boundary")
                n_min, n_max = prm["n_min"] or 1, prm["n_max"]
            t = est.estimate_tail(batches, kind, n_min, n_max, cfg["seed"], name=f"tail_{kind}_L{L}_p{p:g}")
            out.estimates.append({**t.estimate.to_record(), "L": L, "p": p, "kind": kind,
                                  "intercept": t.fit.intercept, "residual": t.fit.residual, **t.fit.extra})
            out.samples += cfg["n_samples"]
            rows += [[L, p, kind, float(n), float(v)] for n, v in zip(t.sizes, t.values)]
            _tail_checks(out, cfg, spec, p, kind, t.estimate.value)
    out.curves.append(Curve("tail_data", ["L", "p", "kind", "n", "value"], rows))


def _tail_checks(out, cfg, spec, p, kind, value):
    dim = spec.dim
    if kind == "subcritical_exponential" and dim == 1 and 0 < p < 1:
        target, tol = -math.log(p), _tol(cfg, 0.10)
        out.check(f"tail_rate_p{p:g}", abs(value / target - 1) <= tol, value=value, target=target,
                  tolerance=tol, kind="relative")
    elif kind == "supercritical_stretched" and dim == 2:
        tol = _tol(cfg, 0.2)
        out.check(f"tail_zeta_p{p:g}", abs(value - 0.5) <= tol, **_within("zeta", value, 0.5, tol))
    elif kind == "critical_power" and dim == 2:
        target = -(1 + 1 / (91 / 5))
        tol = _tol(cfg, 0.1)
        out.check(f"tail_slope_p{p:g}", abs(value - target) <= tol, **_within("slope", value, target, tol))


@experiment("correlation-length", "correlation length from the decay of the two-point function",
            {"lattice": {"kind": "square"}, "mode": "bond", "p": [0.3], "L": [64], "n_samples": 50},
            {"directions": Param(None, _optional(_vector_list),
                                 "lattice directions, the first sets xi (default: first axis)"),
             "r_min": Param(2, _size, "smallest fitted distance"),
             "r_max": Param(None, _optional(_size), "largest distance (default L/4)"),
             "tolerance": TOLERANCE})
def run_correlation_length(cfg, out, outdir):
    prm = cfg["params"]
    rows = []
    for L in cfg["L"]:
        spec = _spec(cfg, L)
        for p in cfg["p"]:
            r = est.fit_correlation_length(spec, p, prm["directions"], n_samples=cfg["n_samples"],
                                           seed=cfg["seed"], mode=cfg["mode"], r_min=prm["r_min"],
                                           r_max=prm["r_max"])
            out.add(r.estimate, L=L, p=p, phi={",".join(map(str, d)): v for d, v in r.phi.items()})
            for k, d in enumerate(f.direction for f in r.fits):
                rows += [[L, p, ",".join(map(str, d)), i + 1, float(g), float(s)]
                         for i, (g, s) in enumerate(zip(r.G[k], r.G_stderr[k]))]
            if spec.dim == 1 and cfg["mode"] == "bond" and 0 < p < 1:
                target, tol = -1 / math.log(p), _tol(cfg, 0.05)
                out.check(f"xi_p{p:g}", abs(r.xi / target - 1) <= tol, value=r.xi, target=target,
                          tolerance=tol, kind="relative")
    out.curves.append(Curve("two_point", ["L", "p", "direction", "r", "G", "stderr"], rows))


@experiment("nu-beta", "nu and beta from finite-size scaling of crossing windows and theta at pc",
            {"lattice": {"kind": "triangular"}, "mode": "site", "L": [16, 32, 64, 128], "n_samples": 4000},
            {"pc": Param(None, _optional(_prob), "critical point (reference value when null)"),
             "n_boot": Param(est.N_BOOT, _size, "bootstrap resamples")})
def run_nu_beta(cfg, out, outdir):
    spec0 = _spec(cfg, cfg["L"][0])
    pc = cfg["params"]["pc"]
    if pc is None:
        pc = est.reference_pc(spec0, cfg["mode"])
    samples = [est.sweep_samples(_spec(cfg, L), cfg["mode"], cfg["n_samples"], cfg["seed"]) for L in cfg["L"]]
    r = est.estimate_nu_beta(samples, pc, cfg["params"]["n_boot"], cfg["seed"])
    out.add(r.nu, pc=r.pc)
    out.add(r.beta, pc=r.pc)
    out.samples = r.nu.n_samples
    out.curves.append(Curve("nu_beta_by_L", ["L", "window_width", "theta_at_pc"],
                            [[L, float(w), float(t)] for L, w, t in zip(r.sizes, r.widths, r.theta_at_pc)]))
    if spec0.dim == 2:
        out.check("nu", abs(r.nu.value - 1.33) <= 0.15, **_within("nu", r.nu.value, 1.33, 0.15))
        out.check("beta", abs(r.beta.value - 0.14) <= 0.06, **_within("beta", r.beta.value, 0.14, 0.06))


EXPONENT_SETS = {"2d": est.TWO_D_EXPONENTS, "mean-field": est.MEAN_FIELD_EXPONENTS}


@experiment("scaling-relations", "residuals of the scaling and hyperscaling relations",
            {},
            {"set": Param("2d", _choice(tuple(EXPONENT_SETS)), "base exponent set"),
             "exponents": Param({}, _exponents, "overrides of individual exponents")})
def run_scaling_relations(cfg, out, outdir):
    e = EXPONENT_SETS[cfg["params"]["set"]]
    over = {k: (Fraction(v).limit_denominator(10 ** 12) if isinstance(v, float) else Fraction(v))
            for k, v in cfg["params"]["exponents"].items()}
    res = est.check_scaling_relations(e.replace(**over))
    rows = []
    for name, r in res.items():
        out.estimates.append({"name": name, "value": float(r), "stderr": 0.0, "n": 0, "seed": cfg["seed"],
                              "method": "exact-arithmetic"})
        rows.append([name, float(r), str(r)])
    out.curves.append(Curve("scaling_relations", ["relation", "residual", "exact"], rows))
    worst = max(abs(float(r)) for r in res.values())
    out.check("scaling_relations", worst <= 1e-12, value=worst, target=0.0, tolerance=1e-12)


# ---------------------------------------------------------------- two dimensions

@experiment("selfdual", "LR crossing of the self-dual (n+1) x n bond box at p = 1/2",
            {"L": [16], "n_samples": 10000})
def run_selfdual(cfg, out, outdir):
    rows = []
    for n in cfg["L"]:
        e = twod.selfdual_crossing_test(n, cfg["n_samples"], cfg["seed"])
        out.add(e, L=n)
        rows.append([n, e.value, e.stderr])
        out.check(f"selfdual_n{n}", abs(e.z(0.5)) <= 3, value=e.value, target=0.5, z=e.z(0.5), tolerance="3 sigma")
    out.curves.append(Curve("selfdual", ["n", "crossing", "stderr"], rows))


@experiment("rsw", "critical box crossings and annulus circuits across scales",
            {"lattice": {"kind": "triangular"}, "mode": "site", "L": [8, 16, 32, 64], "n_samples": 2000},
            {"shape": Param("box", _choice(("box", "annulus")), "box crossing or annulus circuit"),
             "a": Param(1.0, lambda n, v: _number(n, v, 0.0, lo_open=True), "box width per unit scale"),
             "b": Param(1.0, lambda n, v: _number(n, v, 0.0, lo_open=True), "box height per unit scale"),
             "modulus": Param(2.0, lambda n, v: _number(n, v, 0.0, lo_open=True), "log(outer/inner) of the annulus"),
             "max_ratio": Param(2.0, lambda n, v: _number(n, v, 1.0), "allowed max/min ratio across scales")})
def run_rsw(cfg, out, outdir):
    prm = cfg["params"]
    if prm["shape"] == "box":
        r = twod.rsw_box(prm["a"], prm["b"], cfg["L"], cfg["n_samples"], cfg["seed"], cfg["lattice"]["kind"],
                         cfg["mode"])
    else:
        r = twod.rsw_annulus(cfg["L"], cfg["n_samples"], cfg["seed"], prm["modulus"])
    for n, e in zip(r.n_list, r.estimates):
        out.add(e, L=n)
    out.curves.append(Curve(f"rsw_{prm['shape']}", ["n", "probability", "stderr"],
                            [[n, e.value, e.stderr] for n, e in zip(r.n_list, r.estimates)]))
    out.check("rsw_uniform", r.minimum > 0 and r.ratio <= prm["max_ratio"], minimum=r.minimum,
              maximum=r.maximum, ratio=r.ratio if r.minimum > 0 else None, tolerance=prm["max_ratio"])


@experiment("cardy", "ab-cd crossing in the equilateral triangle against f = x",
            {"x": [0.25, 0.5, 0.75], "delta": [1 / 64], "n_samples": 10000},
            {"tolerance": TOLERANCE})
def run_cardy(cfg, out, outdir):
    res = twod.cardy_crossing(cfg["x"], cfg["delta"], cfg["n_samples"], cfg["seed"])
    for r in res:
        out.add(r.f_estimate, x=r.x, delta=r.delta)
    out.samples = cfg["n_samples"] * len(cfg["delta"])
    out.curves.append(Curve("cardy", ["x", "delta", "f", "stderr"],
                            [[r.x, r.delta, r.f, r.f_estimate.stderr] for r in res]))
    finest = min(cfg["delta"])
    tol = _tol(cfg, 0.03)
    for r in res:
        if r.delta == finest:
            out.check(f"cardy_x{r.x:g}", abs(r.f - r.x) <= tol, **_within("f", r.f, r.x, tol))


@experiment("exploration", "exploration paths of critical site percolation in a strip",
            {"L": [256], "n_samples": 1},
            {"height": Param(None, _optional(_size), "region height (default: width)")})
def run_exploration(cfg, out, outdir):
    for w in cfg["L"]:
        paths = twod.exploration_paths(w, cfg["n_samples"], cfg["seed"], cfg["params"]["height"])
        e = est.mean_estimate([p.n_steps for p in paths], seed=cfg["seed"], method="exploration",
                              name=f"exploration_steps_W{w}")
        out.add(e, L=w)
        p0 = paths[0]
        out.curves.append(Curve(f"exploration_path_W{w}", ["step", "x", "y"],
                                [[i, float(a), float(b)] for i, (a, b) in enumerate(p0.points.tolist())]))


CONTROL_TARGETS = {"none": 1.75, "line": 1.0, "block": 2.0}


@experiment("box-dimension", "box-counting dimension of exploration paths (or a line/block control)",
            {"L": [512], "n_samples": 20},
            {"control": Param("none", _choice(tuple(CONTROL_TARGETS)), "synthetic control instead of paths"),
             "scales": Param(None, _optional(_float_grid(_size)), "box sizes (default dyadic)"),
             "tolerance": TOLERANCE})
def run_box_dimension(cfg, out, outdir):
    prm = cfg["params"]
    for w in cfg["L"]:
        if prm["control"] == "line":
            paths = [twod.line_control(w)]
        elif prm["control"] == "block":
            paths = [twod.block_control(w)]
        else:
            paths = twod.exploration_paths(w, cfg["n_samples"], cfg["seed"])
        scales = prm["scales"] or twod.dyadic_scales(w)
        e = twod.box_counting_dimension(paths, scales)
        out.add(est.EstimateWithError(e.value, e.stderr, e.n_samples, cfg["seed"], e.method,
                                      f"box_dimension_{prm['control']}_W{w}"), L=w)
        target, tol = CONTROL_TARGETS[prm["control"]], _tol(cfg, 0.1)
        out.check(f"box_dimension_W{w}", abs(e.value - target) <= tol, **_within("D", e.value, target, tol))
        counts = [[w, s, twod.box_count(paths[0].points if hasattr(paths[0], "points") else paths[0], s)]
                  for s in scales]
        out.curves.append(Curve(f"box_counts_W{w}", ["W", "scale", "boxes_first_path"], counts))


# ---------------------------------------------------------------- variants

@experiment("gradient", "front of gradient percolation against 1 - pc(site square)",
            {"L": [2048], "n_samples": 4}, {"tolerance": TOLERANCE})
def run_gradient(cfg, out, outdir):
    target = 1 - est.NUMERICAL_PC[("square", "site")]
    tol = _tol(cfg, 0.02)
    rows = []
    for n in cfg["L"]:
        rel, width = variants.gradient_front_statistics(n, cfg["n_samples"], cfg["seed"])
        out.add(rel, L=n)
        out.add(width, L=n)
        out.samples -= width.n_samples
        rows.append([n, rel.value, rel.stderr, width.value, width.stderr])
        out.check(f"gradient_n{n}", abs(rel.value - target) <= tol, **_within("height", rel.value, target, tol))
    out.curves.append(Curve("gradient", ["n", "relative_height", "stderr", "width", "width_stderr"], rows))


FPP_LAW = Param("exponential", _choice(variants.PASSAGE_LAWS), "passage-time law")


@experiment("fpp", "first-passage time constant a(0, n e1)/n",
            {"L": [32, 64], "n_samples": 20},
            {"F": FPP_LAW, "margin": Param(16, _size, "extra box margin around the target")})
def run_fpp(cfg, out, outdir):
    rows = []
    for n in cfg["L"]:
        e = variants.fpp_time_constant(n, cfg["n_samples"], cfg["seed"], cfg["params"]["F"],
                                       cfg["params"]["margin"])
        out.add(e, L=n)
        rows.append([n, e.value, e.stderr])
        if cfg["params"]["F"] == "constant":
            out.check(f"fpp_constant_n{n}", e.value == 1.0, value=e.value, target=1.0, tolerance=0.0)
    out.curves.append(Curve("fpp_time_constant", ["n", "mu", "stderr"], rows))


@experiment("fpp-shape", "directional radii of the wet region W(t)",
            {"lattice": {"kind": "square"}, "L": [241], "n_samples": 20},
            {"F": FPP_LAW, "t": Param(40.0, lambda n, v: _number(n, v, 0.0, lo_open=True), "time"),
             "n_directions": Param(variants.N_DIRECTIONS, lambda n, v: _integer(n, v, 4), "number of rays")})
def run_fpp_shape(cfg, out, outdir):
    prm = cfg["params"]
    for L in cfg["L"]:
        prof = variants.fpp_shape_profile(_spec(cfg, L), prm["t"], cfg["n_samples"], cfg["seed"], prm["F"],
                                          prm["n_directions"])
        for k, (r, s) in enumerate(zip(prof.radii, prof.stderr)):
            out.estimates.append({"name": f"fpp_radius_dir{k}", "value": float(r), "stderr": float(s),
                                  "n": cfg["n_samples"], "seed": cfg["seed"], "method": f"fpp-rays-{prm['F']}",
                                  "angle": float(prof.angles[k]), "L": L, "t": prm["t"]})
        out.samples += cfg["n_samples"]
        out.curves.append(Curve(f"fpp_shape_L{L}", ["angle", "radius", "stderr"],
                                [[float(a), float(r), float(s)]
                                 for a, r, s in zip(prof.angles, prof.radii, prof.stderr)]))
        v = variants.convexity_violations(prof.radii, prof.stderr)
        out.check(f"fpp_convexity_L{L}", v == 0, value=v, target=0, tolerance=0)


@experiment("contact", "survival of the contact process from one site",
            {"L": [501], "lambda": [0.5, 1.5, 4.0], "n_samples": 1000},
            {"d": Param(1, lambda n, v: _integer(n, v, 1), "dimension of the box"),
             "t_max": Param(50.0, lambda n, v: _number(n, v, 0.0, lo_open=True), "survival horizon")})
def run_contact(cfg, out, outdir):
    prm = cfg["params"]
    for L in cfg["L"]:
        ests = []
        for lam in sorted(cfg["lambda"]):
            e = variants.contact_survival(prm["d"], L, lam, prm["t_max"], cfg["n_samples"], cfg["seed"])
            out.add(e, L=L, **{"lambda": lam})
            ests.append((lam, e))
        out.curves.append(Curve(f"contact_survival_L{L}", ["lambda", "survival", "stderr"],
                                [[lam, e.value, e.stderr] for lam, e in ests]))
        worst = min((b.value - a.value) / max(math.hypot(a.stderr, b.stderr), 1e-300)
                    for (_, a), (_, b) in zip(ests, ests[1:])) if len(ests) > 1 else 0.0
        out.check(f"contact_monotone_L{L}", worst >= -3, value=worst, target=">= -3 sigma", tolerance=3)
        centre = [sum((L // 2) * L ** k for k in range(prm["d"]))]
        run = variants.contact_simulate(prm["d"], L, ests[-1][0], prm["t_max"], centre, cfg["seed"], 0,
                                        np.linspace(0, prm["t_max"], 101))
        out.curves.append(Curve(f"contact_population_L{L}", ["t", "population"],
                                [[float(t), int(n)] for t, n in zip(run.t_grid, run.population)]))


@experiment("oriented", "origin-to-level-L crossing of 1+1 oriented bond percolation",
            {"L": [64], "p": [0.6447], "n_samples": 1000})
def run_oriented(cfg, out, outdir):
    rows = []
    for L in cfg["L"]:
        th = variants.oriented_threshold_samples(L, cfg["n_samples"], cfg["seed"])
        for p in cfg["p"]:
            e = variants.oriented_crossing(L, p, cfg["n_samples"], cfg["seed"])
            out.add(e, L=L, p=p)
            rows.append([L, p, e.value, e.stderr, float(np.mean(th[:, 1] <= p))])
        bad = int(np.sum(th[:, 0] < th[:, 1]))
        out.check(f"oriented_le_unoriented_L{L}", bad == 0, value=bad, target=0, tolerance=0)
    out.curves.append(Curve("oriented_crossing", ["L", "p", "oriented", "stderr", "unoriented"], rows))


@experiment("oriented-pc", "oriented critical point from median thresholds and extrapolation in L",
            {"L": [32, 64, 128], "n_samples": 1000},
            {"n_boot": Param(est.N_BOOT, _size, "bootstrap resamples"), "tolerance": TOLERANCE})
def run_oriented_pc(cfg, out, outdir):
    r = variants.estimate_oriented_pc(cfg["L"], cfg["n_samples"], cfg["seed"], cfg["params"]["n_boot"])
    out.add(r.estimate)
    out.curves.append(Curve("oriented_pc_by_L", ["L", "median_threshold", "stderr"],
                            [[L, float(a), float(b)] for L, a, b in zip(r.sizes, r.p_L, r.p_L_stderr)]))
    target, tol = variants.ORIENTED_BOND_PC, _tol(cfg, 0.02)
    out.check("oriented_pc", abs(r.value - target) <= tol, **_within("pc", r.value, target, tol))


@experiment("invasion", "invasion percolation from the box centre",
            {"lattice": {"kind": "square"}, "L": [201], "n_samples": 1},
            {"steps": Param(1000, _size, "number of invaded edges")})
def run_invasion(cfg, out, outdir):
    steps = cfg["params"]["steps"]
    for L in cfg["L"]:
        spec = _spec(cfg, L)
        labels = []
        for s in range(cfg["n_samples"]):
            st = variants.invasion_run(spec, cfg["seed"], steps, s)
            again = variants.invasion_run(spec, cfg["seed"], steps, s)
            out.check(f"invasion_deterministic_L{L}_s{s}", np.array_equal(st.edges, again.edges),
                      value=bool(np.array_equal(st.edges, again.edges)), target=True, tolerance=0)
            tail = st.labels[st.edges[steps // 2:]]
            labels.append(float(tail.max()))
            if s == 0:
                out.curves.append(Curve(f"invasion_L{L}", ["step", "edge", "label"],
                                        [[i + 1, int(e), float(st.labels[e])] for i, e in enumerate(st.edges)]))
        out.add(est.mean_estimate(labels, seed=cfg["seed"], method="invasion-late-max-label",
                                  name=f"invasion_late_max_label_L{L}"), L=L)


@experiment("invasion-hit", "probability that an axis point at distance r is invaded",
            {"lattice": {"kind": "square"}, "L": [1001], "n_samples": 200},
            {"radii": Param([5, 10, 20], _float_grid(_size), "distances along the axes"),
             "steps": Param(5000, _size, "number of invaded edges")})
def run_invasion_hit(cfg, out, outdir):
    prm = cfg["params"]
    for L in cfg["L"]:
        res = variants.invasion_hit_probability(prm["radii"], cfg["n_samples"], cfg["seed"], prm["steps"],
                                                _spec(cfg, L))
        for r, e in zip(prm["radii"], res):
            out.add(e, L=L, r=r)
        out.samples = cfg["n_samples"]
        out.curves.append(Curve(f"invasion_hit_L{L}", ["r", "probability", "stderr"],
                                [[r, e.value, e.stderr] for r, e in zip(prm["radii"], res)]))
        pairs = sorted(zip(prm["radii"], res))
        zs = [(a.value - b.value) / math.hypot(a.stderr, b.stderr) for (_, a), (_, b) in zip(pairs, pairs[1:])]
        out.check(f"invasion_hit_decreasing_L{L}", bool(zs) and min(zs) >= 3, value=min(zs) if zs else None,
                  target=">= 3 sigma", tolerance=3)


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

def validate_config(raw) -> dict:
    """Check a parsed config against the registry and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "must be a JSON object")
    for k in raw:
        if k not in TOP_LEVEL:
            raise ConfigError(k, f"unknown field; expected one of {list(TOP_LEVEL)}")
    name = raw.get("experiment")
    if name not in REGISTRY:
        raise ConfigError("experiment", f"must be one of {sorted(REGISTRY)}, got {name!r}")
    if "seed" not in raw:
        raise ConfigError("seed", "is mandatory")
    seed = _integer("seed", raw["seed"], 0)
    if seed >= 2 ** 63:
        raise ConfigError("seed", "must be < 2**63")
    exp = REGISTRY[name]
    cfg = {"experiment": name, "seed": seed}
    for k in FIELD_CHECKS:
        if k in raw and k not in exp.fields:
            raise ConfigError(k, f"not used by experiment {name!r}")
    for k, default in exp.fields.items():
        cfg[k] = FIELD_CHECKS[k](k, raw.get(k, default))
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a JSON object")
    cfg["params"] = {}
    for k in params:
        if k not in exp.params:
            raise ConfigError(f"params.{k}", f"unknown parameter for {name!r}; expected one of {list(exp.params)}")
    for k, prm in exp.params.items():
        cfg["params"][k] = prm.check(f"params.{k}", params.get(k, prm.default))
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise ConfigError("output_dir", "must be a nonempty string")
        cfg["output_dir"] = raw["output_dir"]
    if "lattice" in cfg:
        for L in cfg.get("L", [8]):
            try:
                _spec(cfg, L)
            except LatticeError as exc:
                raise ConfigError("L", str(exc)) from None
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return validate_config(raw)


def resolve_output_dir(cli_out, cfg) -> str:
    return cli_out or os.environ.get(ENV_OUTPUT) or cfg.get("output_dir") or DEFAULT_OUTPUT


def _prepare_output(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output_dir", f"cannot create {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK | os.X_OK):
        raise ConfigError("output_dir", f"{path} is not writable")
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float, Fraction)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _write_csv(path, curve: Curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(curve.columns)
        for row in curve.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def run_experiment(cfg: dict, outdir: str, workers: int = 1) -> dict:
    """Run a validated config, write the report and CSVs, return the report."""
    _prepare_output(outdir)
    exp = REGISTRY[cfg["experiment"]]
    parallel.set_workers(workers)
    out = Outcome()
    t0 = time.perf_counter()
    exp.runner(cfg, out, outdir)
    runtime = time.perf_counter() - t0
    curves = []
    for c in out.curves:
        fname = f"{c.name}.csv"
        _write_csv(os.path.join(outdir, fname), c)
        curves.append({"name": c.name, "file": fname, "columns": c.columns, "rows": len(c.rows)})
    report = {
        "config": cfg,
        "estimates": out.estimates,
        "curves": curves,
        "meta": {"version": __version__, "experiment": cfg["experiment"], "runtime_s": runtime,
                 "samples": out.samples, "workers": workers, "checks": out.checks,
                 "passed": all(c["passed"] for c in out.checks)},
    }
    report = _jsonable(report)
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return report


def _error(kind, field_name, message) -> None:
    json.dump({"error": kind, "field": field_name, "message": message}, sys.stderr)
    sys.stderr.write("\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="percolab", description="Percolation experiments from JSON configs.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="path to a JSON config")
    run.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--assert", dest="check", action="store_true",
                     help="exit with status 3 if any built-in acceptance check fails")
    run.add_argument("--out", default=None, help=f"output directory (overrides ${ENV_OUTPUT} and the config)")
    sub.add_parser("list", help="print the experiment catalog as JSON")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        json.dump(list_experiments(), sys.stdout, indent=2)
        sys.stdout.write("\n")
        return EXIT_OK
    try:
        if args.workers < 1:
            raise ConfigError("workers", f"must be >= 1, got {args.workers}")
        cfg = load_config(args.config)
        outdir = resolve_output_dir(args.out, cfg)
        report = run_experiment(cfg, outdir, args.workers)
    except ConfigError as exc:
        _error("validation", exc.field, str(exc))
        return EXIT_INVALID
    except (est.EstimationError, LatticeError, ValueError) as exc:
        _error("estimation", None, str(exc))
        return EXIT_FAIL
    for c in report["meta"]["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    print(os.path.join(outdir, "report.json"))
    if args.check and not report["meta"]["passed"]:
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
