"""Macroscopic estimators: percolation probability, cluster sizes, thresholds,
decay rates, critical exponents and the scaling-relation checker.

Mean-type estimates report ``stderr = std / sqrt(n)``; fitted quantities use
200 bootstrap resamples of the underlying samples.  All fits are deterministic
given their input data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from . import parallel
from .clusters import EventCurve, _event_masks, _first_events, _label, insertion_order
from .lattice import Graph, LatticeSpec, build_lattice, dual_or_star
from .sampling import check_mode, check_p, check_seed, derive_seed, element_count, generator, label_stream

N_BOOT = 200


class EstimationError(RuntimeError):
    """Statistical failure of an estimator (non-crossing curve, bad fit range, ...)."""


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    stderr: float
    n_samples: int
    seed: int | None = None
    method: str = ""
    name: str = ""

    def to_record(self) -> dict:
        return {"name": self.name, "value": float(self.value), "stderr": float(self.stderr),
                "n": int(self.n_samples), "seed": self.seed, "method": self.method}

    def z(self, target: float) -> float:
        """Deviation from ``target`` in standard errors."""
        if self.stderr == 0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.stderr


def mean_estimate(values, *, seed=None, method="", name="") -> EstimateWithError:
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateWithError(float(values.mean()), se, n, seed, method, name)


# --------------------------------------------------------------------------
# reference thresholds
# --------------------------------------------------------------------------

def bowtie_polynomial(p: float) -> float:
    return p ** 5 - 6 * p ** 3 + 6 * p ** 2 + p - 1


def bowtie_root(tol: float = 1e-15) -> float:
    """Root in (0, 1) of the bow-tie threshold polynomial, by bisection."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bowtie_polynomial(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


TRIANGULAR_BOND_PC = 2.0 * math.sin(math.pi / 18.0)

# exact values, plus a few numerical literature values used only for input checks
EXACT_PC = {
    ("square", "bond"): 0.5,
    ("triangular", "site"): 0.5,
    ("triangular", "bond"): TRIANGULAR_BOND_PC,
    ("hexagonal", "bond"): 1.0 - TRIANGULAR_BOND_PC,
}
NUMERICAL_PC = {
    ("square", "site"): 0.592746,
    ("hexagonal", "site"): 0.697043,
    ("bowtie", "site"): 0.5475,
}


def reference_pc(spec: LatticeSpec, mode: str) -> float | None:
    if spec.kind == "tree":
        return 1.0 / spec.arity
    if spec.kind == "hypercubic" and spec.d == 1:
        return 1.0
    if (spec.kind, mode) == ("bowtie", "bond"):
        return bowtie_root()
    key = (spec.kind, mode)
    return EXACT_PC.get(key, NUMERICAL_PC.get(key))


# --------------------------------------------------------------------------
# centre-cluster statistics: theta proxy and mean cluster size
# --------------------------------------------------------------------------

def _center_chunk(start, stop, graph, mode, p, seed, bit):
    M = element_count(graph, mode)
    site = mode == "site"
    sizes = np.zeros(stop - start, dtype=np.int64)
    touch = np.zeros(stop - start, dtype=bool)
    c = graph.center
    for row, s in enumerate(range(start, stop)):
        is_open = label_stream(seed, s, M) <= p
        root, size, mask = _label(graph.n_vertices, graph.edges, is_open, site, graph.boundary_bits)
        r = root[c]
        if r >= 0:
            sizes[row] = size[r]
            touch[row] = (mask[r] & bit) != 0
    return sizes, touch


def center_cluster_samples(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "bond",
                           graph: Graph | None = None):
    """|C(centre)| and whether it touches the outer boundary, one entry per sample."""
    g = graph if graph is not None else build_lattice(spec)
    return parallel.map_chunks(_center_chunk, n_samples, g, check_mode(mode), check_p(p), check_seed(seed),
                               g.boundary_bit("boundary"))


def _box(spec: LatticeSpec, L):
    if L is not None and L != spec.L:
        spec = spec.with_L(L)
    if spec.L < 3:
        raise ValueError(f"L: box too small for a centre-to-boundary proxy (L={spec.L} < 3)")
    return spec


def estimate_theta_proxy(spec: LatticeSpec, p: float, L: int | None = None, n_samples: int = 1000,
                         seed: int = 0, mode: str = "bond") -> EstimateWithError:
    """P_p(centre connected to the boundary of the box)."""
    spec = _box(spec, L)
    _, touch = center_cluster_samples(spec, p, n_samples, seed, mode)
    return mean_estimate(touch, seed=seed, method=f"mc-center-boundary-{mode}", name="theta")


def estimate_chi(spec: LatticeSpec, p: float, L: int | None = None, n_samples: int = 1000, seed: int = 0,
                 finite_only: bool = False, mode: str = "bond") -> EstimateWithError:
    """Mean size of the centre's cluster; ``finite_only`` drops boundary-touching clusters."""
    spec = _box(spec, L)
    sizes, touch = center_cluster_samples(spec, p, n_samples, seed, mode)
    if finite_only:
        sizes = np.where(touch, 0, sizes)
    return mean_estimate(sizes, seed=seed, method=f"mc-center-size-{mode}",
                         name="chi_f" if finite_only else "chi")


# --------------------------------------------------------------------------
# single-sweep threshold samples
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SweepSample:
    """First-event occupation numbers and thresholds of many sweeps at one size.

    ``p_cross[i]`` is the label of the element whose insertion first created
    the crossing in sample ``i``: the crossing holds at ``p`` iff
    ``p >= p_cross[i]``.
    """

    spec: LatticeSpec
    mode: str
    M: int
    m_cross: np.ndarray
    m_theta: np.ndarray
    p_cross: np.ndarray
    p_theta: np.ndarray
    seed: int

    @property
    def n_samples(self) -> int:
        return int(self.m_cross.shape[0])

    def crossing_curve(self, idx=None) -> EventCurve:
        m = self.m_cross if idx is None else self.m_cross[idx]
        return EventCurve.from_events(m, self.M)

    def theta_curve(self, idx=None) -> EventCurve:
        m = self.m_theta if idx is None else self.m_theta[idx]
        return EventCurve.from_events(m, self.M)


def _sweep_chunk(start, stop, graph, mode, seed, cross, theta):
    M = element_count(graph, mode)
    site = mode == "site"
    out = np.zeros((stop - start, 4))
    for row, s in enumerate(range(start, stop)):
        lab = label_stream(seed, s, M)
        order = insertion_order(lab)
        mc, mt = _first_events(graph.n_vertices, site, graph.edges, graph.indptr, graph.indices, order,
                               graph.boundary_bits, cross, graph.center, theta)
        out[row] = (mc, mt, lab[order[mc - 1]] if mc > 0 else 0.0, lab[order[mt - 1]] if mt > 0 else 0.0)
    return out


def sweep_samples(spec: LatticeSpec, mode: str, n_samples: int, seed: int, sets=("left", "right"),
                  theta_set: str | None = "boundary") -> SweepSample:
    """Run ``n_samples`` independent sweeps on the box ``spec`` (seeded per size)."""
    g = build_lattice(spec)
    cross, theta = _event_masks(g, sets, theta_set)
    sub = derive_seed(seed, spec.L, spec.Ly or 0)
    out = parallel.map_chunks(_sweep_chunk, n_samples, g, check_mode(mode), sub, cross, theta)
    return SweepSample(spec, mode, element_count(g, mode), out[:, 0].astype(np.int64),
                       out[:, 1].astype(np.int64), out[:, 2], out[:, 3], sub)


def solve_half(curve: EventCurve, target: float = 0.5, tol: float = 1e-7) -> float:
    """Bisection for ``convolve(curve, p) = target`` on the monotone convolved curve."""
    lo, hi = 0.0, 1.0
    f_lo, f_hi = curve.value(lo), curve.value(hi)
    if not f_lo <= target <= f_hi:
        raise EstimationError(
            f"crossing curve does not pass {target}: value {f_lo:.4g} at p=0 and {f_hi:.4g} at p=1")
    # narrow the bracket using the event counts themselves
    q = curve.events / curve.M
    for cand_lo, cand_hi in ((q.min() - 0.02, q.max() + 0.02),):
        cand_lo, cand_hi = max(0.0, cand_lo), min(1.0, cand_hi)
        if curve.value(cand_lo) <= target <= curve.value(cand_hi):
            lo, hi = cand_lo, cand_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if curve.value(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class PcEstimate:
    estimate: EstimateWithError
    sizes: list
    p_L: np.ndarray
    p_L_stderr: np.ndarray
    amplitude: float
    nu: float
    samples: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.estimate.value

    @property
    def stderr(self) -> float:
        return self.estimate.stderr

    def table(self) -> list[dict]:
        return [{"L": int(L), "p": float(p), "stderr": float(s)}
                for L, p, s in zip(self.sizes, self.p_L, self.p_L_stderr)]


NU_GRID = np.linspace(0.5, 3.0, 251)


def fit_finite_size_shift(sizes, p_L, weights=None, nu_grid=NU_GRID):
    """Fit ``p(L) = p_c + a L^(-1/nu)``; grid over nu, weighted linear least squares inside.

    With two sizes nu cannot be resolved and is pinned to 4/3.
    """
    sizes = np.asarray(sizes, dtype=float)
    p_L = np.asarray(p_L, dtype=float)
    w = np.ones_like(p_L) if weights is None else np.asarray(weights, dtype=float)
    grid = np.array([4.0 / 3.0]) if sizes.shape[0] < 3 else nu_grid
    best = (math.inf, p_L[-1], 0.0, 4.0 / 3.0)
    sw = np.sqrt(w)
    for nu in grid:
        X = np.column_stack([np.ones_like(sizes), sizes ** (-1.0 / nu)])
        coef, *_ = np.linalg.lstsq(X * sw[:, None], p_L * sw, rcond=None)
        chi2 = float(np.sum(w * (p_L - X @ coef) ** 2))
        if chi2 < best[0] - 1e-15:
            best = (chi2, coef[0], coef[1], nu)
    return best


BOTH_DIRECTIONS = (("left", "right"), ("bottom", "top"))


def _direction_sets(spec: LatticeSpec, sets):
    if sets is not None:
        return (tuple(sets),) if isinstance(sets[0], str) else tuple(tuple(s) for s in sets)
    if spec.kind in ("square", "triangular", "hexagonal", "bowtie") and spec.boundary == "free":
        return BOTH_DIRECTIONS
    if spec.boundary == "periodic-x":
        return (("bottom", "top"),)
    return (("left", "right"),)


def _pooled_curve(group, idx=None) -> EventCurve:
    """Crossing curve averaged over the directions of one size (same labels)."""
    events = [s.m_cross if idx is None else s.m_cross[idx] for s in group]
    return EventCurve.from_events(np.concatenate(events), group[0].M)


def estimate_pc(spec: LatticeSpec, L_list, n_samples: int = 1000, seed: int = 0, mode: str = "bond",
                sets=None, n_boot: int = N_BOOT, samples=None) -> PcEstimate:
    """Threshold from the 1/2-point of convolved sweep crossing curves, extrapolated in L.

    On free planar boxes the crossing curve is the average of the left-right
    and bottom-top crossing probabilities of the same configurations, which
    cancels the leading effect of the box aspect ratio.  ``samples`` may hold
    precomputed :class:`SweepSample` objects (or tuples of them, one per
    direction) for the sizes in ``L_list``.
    """
    L_list = sorted(int(L) for L in L_list)
    if len(L_list) < 2:
        raise ValueError("L_list: need at least two box sizes")
    if samples is None:
        dirs = _direction_sets(spec, sets)
        samples = [tuple(sweep_samples(spec.with_L(L), mode, n_samples, seed, d) for d in dirs)
                   for L in L_list]
    groups = [g if isinstance(g, tuple) else (g,) for g in samples]
    p_L = np.array([solve_half(_pooled_curve(g)) for g in groups])
    rng = np.random.default_rng(derive_seed(seed, 0xB007))
    boot = np.empty((n_boot, len(groups)))
    for j, g in enumerate(groups):
        n = g[0].n_samples
        for b in range(n_boot):
            boot[b, j] = solve_half(_pooled_curve(g, rng.integers(0, n, n)))
    se_L = boot.std(axis=0, ddof=1)
    w = 1.0 / np.maximum(se_L, 1e-6) ** 2
    chi2, pc, a, nu = fit_finite_size_shift(L_list, p_L, w)
    pcs = np.array([fit_finite_size_shift(L_list, row, w)[1] for row in boot])
    se = float(pcs.std(ddof=1))
    dof = len(L_list) - (3 if len(L_list) >= 3 else 2)
    if dof > 0 and chi2 / dof > 1.0:
        se *= math.sqrt(chi2 / dof)
    est = EstimateWithError(float(pc), se, sum(g[0].n_samples for g in groups), seed,
                            "sweep-half-crossing+fss-extrapolation", f"pc_{mode}_{spec.kind}")
    return PcEstimate(est, L_list, p_L, se_L, float(a), float(nu), groups)


@dataclass(frozen=True, eq=False)
class DualityResult:
    residual: EstimateWithError
    per_L: list
    primary: PcEstimate
    partner: PcEstimate


def check_duality(spec: LatticeSpec, L_list, n_samples: int = 1000, seed: int = 0,
                  mode: str = "bond") -> DualityResult:
    """Residual ``p_c(L) + p_c(L') - 1`` for a lattice and its dual (bond) or star (site)."""
    partner_spec = dual_or_star(spec, "dual" if mode == "bond" else "star")
    first = estimate_pc(spec, L_list, n_samples, seed, mode)
    if partner_spec == spec:
        second = first
        se = 2.0 * first.stderr
        se_L = 2.0 * first.p_L_stderr
    else:
        second = estimate_pc(partner_spec, L_list, n_samples, derive_seed(seed, 0xD0A1), mode)
        se = math.hypot(first.stderr, second.stderr)
        se_L = np.hypot(first.p_L_stderr, second.p_L_stderr)
    res = first.value + second.value - 1.0
    per_L = [{"L": L, "residual": float(a + b - 1.0), "stderr": float(s)}
             for L, a, b, s in zip(first.sizes, first.p_L, second.p_L, se_L)]
    est = EstimateWithError(res, se, first.estimate.n_samples + (0 if second is first else second.estimate.n_samples),
                            seed, "pc-sum-minus-one", f"duality_{spec.kind}_{partner_spec.kind}_{mode}")
    return DualityResult(est, per_L, first, second)


# --------------------------------------------------------------------------
# decay fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Fitted decay law.

    ``value`` is the rate (subcritical), the stretched exponent (supercritical),
    the power-law slope (critical) or the correlation length (two-point fits).
    """

    value: float
    intercept: float
    n_min: float
    n_max: float
    residual: float
    kind: str
    direction: tuple | None = None
    extra: dict = field(default_factory=dict)


TAIL_MODES = ("subcritical_exponential", "supercritical_stretched", "critical_power")
ZETA_GRID = np.round(np.arange(0.05, 1.5001, 0.001), 6)


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return coef, float(np.sqrt(np.mean(r ** 2)))


def fit_tail(sizes, values, mode: str, n_min: float | None = None, n_max: float | None = None,
             counts=None) -> DecayFit:
    """Fit the tail of a cluster-size law.

    ``values`` may be probabilities ``P(|C| = n)`` or survival probabilities
    ``P(|C| >= n)`` (any positive multiple works; only the intercept changes).

    * ``subcritical_exponential``: ``log P = a + b log n - r n``; returns ``r``.
    * ``supercritical_stretched``: ``log P = a - c n^z``; returns ``z`` (grid
      search over ``z``, least squares for ``a, c``).  Best used on survival
      data, which smooths the lattice-animal oscillations of small clusters.
    * ``critical_power``: ``log P = a + s log n``; returns ``s``.

    ``counts`` (raw event counts behind each value) switch on weighted least
    squares with weights ``counts``, the inverse variance of ``log P``.
    """
    if mode not in TAIL_MODES:
        raise ValueError(f"mode: must be one of {TAIL_MODES}")
    n = np.asarray(sizes, dtype=float)
    P = np.asarray(values, dtype=float)
    w = np.ones_like(n) if counts is None else np.sqrt(np.asarray(counts, dtype=float))
    keep = P > 0
    if n_min is not None:
        keep &= n >= n_min
    if n_max is not None:
        keep &= n <= n_max
    n, P, w = n[keep], P[keep], w[keep]
    if n.size < 4 or n.max() < 10 * n.min():
        raise EstimationError("fit range must span at least one decade in n with >= 4 points")
    y = np.log(P)
    ln = np.log(n)
    one = np.ones_like(n)
    if mode == "subcritical_exponential":
        coef, res = _ols(np.column_stack([one, ln, -n]) * w[:, None], y * w)
        return DecayFit(float(coef[2]), float(coef[0]), n.min(), n.max(), res, mode,
                        extra={"prefactor_power": float(coef[1])})
    if mode == "critical_power":
        coef, res = _ols(np.column_stack([one, ln]), y)
        s = float(coef[1])
        delta = 1.0 / (-s - 1.0) if s < -1.0 else math.inf
        return DecayFit(s, float(coef[0]), n.min(), n.max(), res, mode, extra={"delta": delta})
    best = None
    for z in ZETA_GRID:
        coef, res = _ols(np.column_stack([one, -(n ** z)]), y)
        if best is None or res < best[1] - 1e-15:
            best = (z, res, coef)
    z, res, coef = best
    return DecayFit(float(z), float(coef[0]), n.min(), n.max(), res, mode,
                    extra={"surface_rate": float(coef[1])})


def survival_from_histogram(histogram: dict, min_count: int = 20):
    """``(n, P(|C(v)| >= n))`` up to unit normalisation, keeping tails with >= ``min_count`` clusters."""
    n = np.array(sorted(histogram), dtype=float)
    c = np.array([histogram[k] for k in sorted(histogram)], dtype=float)
    weight = n * c
    surv = np.cumsum(weight[::-1])[::-1] / weight.sum()
    tail_count = np.cumsum(c[::-1])[::-1]
    keep = tail_count >= min_count
    return n[keep], surv[keep]


def size_distribution(histogram: dict, n_vertices: int):
    """Per-vertex ``P(|C(v)| = n) = n N_n / V`` from a cluster-size histogram."""
    n = np.array(sorted(histogram), dtype=float)
    counts = np.array([histogram[k] for k in sorted(histogram)], dtype=float)
    return n, n * counts / n_vertices


def log_binned(sizes, probs, bins_per_decade: int = 5):
    """Average ``P(n)`` over logarithmic bins of integer sizes (density per integer)."""
    sizes = np.asarray(sizes, dtype=float)
    probs = np.asarray(probs, dtype=float)
    top = sizes.max() + 1
    edges = np.unique(np.floor(np.logspace(0, np.log10(top) + 1e-9,
                                           int(np.ceil(np.log10(top) * bins_per_decade)) + 1)))
    edges = np.append(edges[edges <= top], top + 1)
    edges = np.unique(edges)
    centers, dens = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (sizes >= lo) & (sizes < hi)
        width = hi - lo
        if sel.any():
            centers.append(math.sqrt(lo * (hi - 1)) if hi - 1 > lo else lo)
            dens.append(probs[sel].sum() / width)
    return np.array(centers), np.array(dens)


def _hist_chunk(start, stop, graph, mode, p, seed, exclude_bit, drop_largest):
    M = element_count(graph, mode)
    site = mode == "site"
    acc = np.zeros(graph.n_vertices + 1, dtype=np.int64)
    for s in range(start, stop):
        is_open = label_stream(seed, s, M) <= p
        root, size, mask = _label(graph.n_vertices, graph.edges, is_open, site, graph.boundary_bits)
        r = np.unique(root[root >= 0])
        if exclude_bit:
            r = r[(mask[r] & exclude_bit) == 0]
        sz = size[r]
        if drop_largest and sz.size:
            sz = np.delete(sz, np.argmax(sz))
        acc += np.bincount(sz, minlength=graph.n_vertices + 1)
    return acc[None, :]


HIST_BATCH = 32


def cluster_histogram_batches(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "bond",
                              exclude: str | None = None, drop_largest: bool = False) -> np.ndarray:
    """Cluster-size counts per batch of consecutive samples, shape ``(n_batches, V + 1)``."""
    g = build_lattice(spec)
    bit = g.boundary_bit(exclude) if exclude else 0
    return parallel.map_chunks(_hist_chunk, n_samples, g, check_mode(mode), check_p(p), check_seed(seed),
                               bit, drop_largest, chunk=HIST_BATCH)


def cluster_histogram(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "bond",
                      exclude: str | None = None, drop_largest: bool = False) -> dict:
    """Summed cluster-size histogram over samples (optionally finite clusters only)."""
    total = cluster_histogram_batches(spec, p, n_samples, seed, mode, exclude, drop_largest).sum(axis=0)
    return histogram_dict(total)


def histogram_dict(counts: np.ndarray) -> dict:
    nz = np.flatnonzero(counts)
    return {int(k): int(counts[k]) for k in nz}


def _bulk_chunk(start, stop, graph, mode, p, seed, central, bit):
    M = element_count(graph, mode)
    site = mode == "site"
    acc = np.zeros(graph.n_vertices + 1, dtype=np.int64)
    for s in range(start, stop):
        is_open = label_stream(seed, s, M) <= p
        root, size, mask = _label(graph.n_vertices, graph.edges, is_open, site, graph.boundary_bits)
        r = root[central]
        r = r[r >= 0]
        r = r[(mask[r] & bit) == 0]
        acc += np.bincount(size[r], minlength=graph.n_vertices + 1)
    return acc[None, :]


def central_vertices(spec: LatticeSpec, margin: float = 0.25) -> np.ndarray:
    g = build_lattice(spec)
    lo = np.ceil(margin * np.asarray(spec.shape)).astype(int)
    hi = np.asarray(spec.shape) - 1 - lo
    return np.flatnonzero(np.all((g.coords >= lo) & (g.coords <= hi), axis=1))


def bulk_size_batches(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "bond",
                      margin: float = 0.25) -> np.ndarray:
    """Per batch, the number of central vertices whose (boundary-free) cluster has size ``n``."""
    g = build_lattice(spec)
    return parallel.map_chunks(_bulk_chunk, n_samples, g, check_mode(mode), check_p(p), check_seed(seed),
                               central_vertices(spec, margin), g.boundary_bit("boundary"), chunk=HIST_BATCH)


def bulk_size_distribution(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "bond",
                           margin: float = 0.25):
    """``P(|C(v)| = n)`` for ``v`` uniform in the central part of the box.

    Only vertices at least ``margin * L`` from every side contribute, and
    clusters touching the boundary are dropped, so sizes well below the
    finite-size cutoff are unbiased.  Returns ``(sizes, probabilities, counts)``.
    """
    acc = bulk_size_batches(spec, p, n_samples, seed, mode, margin).sum(axis=0)
    nz = np.flatnonzero(acc)
    norm = central_vertices(spec, margin).size * n_samples
    return nz.astype(float), acc[nz] / norm, acc[nz]


@dataclass(frozen=True, eq=False)
class TailEstimate:
    fit: DecayFit
    estimate: EstimateWithError
    sizes: np.ndarray
    values: np.ndarray


def _bulk_power_data(counts):
    nz = np.flatnonzero(counts)
    return log_binned(nz.astype(float), counts[nz] / counts.sum())


def _survival_data(counts):
    return survival_from_histogram(histogram_dict(counts))


def _pmf_data(counts, min_count: int = 20):
    # sparse sizes bias log P; keep well-populated ones and weight by count
    kept = np.where(counts >= min_count, counts, 0)
    n, P = size_distribution(histogram_dict(kept), 1)
    return n, P, kept[n.astype(int)]


TAIL_DATA = {"critical_power": _bulk_power_data, "supercritical_stretched": _survival_data,
             "subcritical_exponential": _pmf_data}


def estimate_tail(batches: np.ndarray, mode: str, n_min=None, n_max=None, seed: int = 0,
                  n_boot: int = N_BOOT, name: str = "tail") -> TailEstimate:
    """Tail fit on summed batch histograms with a bootstrap over batches.

    The data transform depends on ``mode``: log-binned per-vertex size law
    (critical), survival function of finite clusters (supercritical) or raw
    per-vertex size law (subcritical).
    """
    to_data = TAIL_DATA[mode]
    sizes, values, *counts = to_data(batches.sum(axis=0))
    fit = fit_tail(sizes, values, mode, n_min, n_max, *counts)
    rng = np.random.default_rng(derive_seed(seed, 0x7A11))
    reps = []
    for _ in range(n_boot):
        pick = batches[rng.integers(0, batches.shape[0], batches.shape[0])].sum(axis=0)
        try:
            b_sizes, b_values, *b_counts = to_data(pick)
            reps.append(fit_tail(b_sizes, b_values, mode, n_min, n_max, *b_counts).value)
        except EstimationError:
            continue
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else math.inf
    est = EstimateWithError(fit.value, se, int(batches.shape[0]), seed, f"tail-{mode}+batch-bootstrap", name)
    return TailEstimate(fit, est, sizes, values)


# --------------------------------------------------------------------------
# two-point function and correlation length
# --------------------------------------------------------------------------

def _two_point_chunk(start, stop, graph, mode, p, seed, directions, r_max):
    M = element_count(graph, mode)
    site = mode == "site"
    shape = tuple(reversed(graph.spec.shape))
    out = np.zeros((stop - start, len(directions), r_max))
    for row, s in enumerate(range(start, stop)):
        is_open = label_stream(seed, s, M) <= p
        root, _, _ = _label(graph.n_vertices, graph.edges, is_open, site, graph.boundary_bits)
        grid = root.reshape(shape)
        for k, d in enumerate(directions):
            dv = tuple(reversed(d))
            for r in range(1, r_max + 1):
                src = tuple(slice(0, n - r * abs(c)) if c >= 0 else slice(r * abs(c), n)
                            for n, c in zip(shape, dv))
                dst = tuple(slice(r * c, n) if c >= 0 else slice(0, n - r * abs(c))
                            for n, c in zip(shape, dv))
                a, b = grid[src], grid[dst]
                if a.size == 0:
                    continue
                out[row, k, r - 1] = np.mean((a == b) & (a >= 0))
    return out


@dataclass(frozen=True, eq=False)
class CorrelationFit:
    xi: float
    phi: dict
    fits: list
    G: np.ndarray
    G_stderr: np.ndarray
    estimate: EstimateWithError | None = None

    def by_direction(self, direction) -> DecayFit:
        for f in self.fits:
            if f.direction == tuple(direction):
                return f
        raise KeyError(direction)


def two_point_function(spec: LatticeSpec, p: float, directions, r_max: int, n_samples: int, seed: int,
                       mode: str = "bond"):
    """Translation-averaged ``P(v <-> v + r d)`` for each direction ``d`` and ``r = 1..r_max``."""
    g = build_lattice(spec)
    directions = [tuple(int(c) for c in d) for d in directions]
    dim = len(spec.shape)
    if any(len(d) != dim or not any(d) for d in directions):
        raise ValueError(f"directions: each must be a nonzero vector with {dim} components")
    vals = parallel.map_chunks(_two_point_chunk, n_samples, g, check_mode(mode), check_p(p), check_seed(seed),
                               directions, int(r_max), chunk=16)
    n = vals.shape[0]
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(n), vals


def fit_correlation_length(spec: LatticeSpec, p: float, directions=None, L: int | None = None,
                           n_samples: int = 50, seed: int = 0, mode: str = "bond", r_min: int = 2,
                           r_max: int | None = None, max_rel_err: float = 0.05) -> CorrelationFit:
    """Correlation length from log-linear fits of the two-point function.

    ``phi`` is normalised to 1 along the first direction; distances along a
    direction ``d`` are measured in Euclidean units ``r |d|``.
    """
    if L is not None:
        spec = spec.with_L(L)
    pc = reference_pc(spec, mode)
    if pc is not None and p >= pc:
        raise ValueError(f"p: correlation-length fits need p < p_c ({pc:.6g}), got {p}")
    dim = spec.dim or 1
    if directions is None:
        directions = [tuple(1 if i == 0 else 0 for i in range(dim))]
    directions = [tuple(int(c) for c in d) for d in directions]
    if r_max is None:
        r_max = max(2, spec.L // 4)
    G, se, vals = two_point_function(spec, p, directions, r_max, n_samples, seed, mode)
    r = np.arange(1, r_max + 1, dtype=float)
    fits, windows = [], []
    for k, d in enumerate(directions):
        ok = (G[k] > 0) & (r >= r_min)
        ok &= np.where(G[k] > 0, se[k] / np.where(G[k] > 0, G[k], 1.0), np.inf) <= max_rel_err
        # keep the leading contiguous run of usable distances
        idx = np.flatnonzero(ok)
        if idx.size:
            breaks = np.flatnonzero(np.diff(idx) > 1)
            idx = idx[: breaks[0] + 1] if breaks.size else idx
        if idx.size < 3:
            raise EstimationError(f"too few usable distances along {d} (need 3, have {idx.size})")
        dist = r[idx] * math.sqrt(sum(c * c for c in d))
        coef, res = _ols(np.column_stack([np.ones_like(dist), -dist]), np.log(G[k][idx]))
        fits.append(DecayFit(1.0 / coef[1], float(coef[0]), dist.min(), dist.max(), res,
                             "two_point", d, {"rate": float(coef[1])}))
        windows.append((idx, dist))
    rate0 = fits[0].extra["rate"]
    phi = {f.direction: f.extra["rate"] / rate0 for f in fits}
    # bootstrap over samples for the first direction, fit window held fixed
    idx0, dist0 = windows[0]
    X = np.column_stack([np.ones_like(dist0), -dist0])
    rng = np.random.default_rng(derive_seed(seed, 0xC0BB))
    reps = []
    for _ in range(N_BOOT):
        Gb = vals[rng.integers(0, vals.shape[0], vals.shape[0]), 0][:, idx0].mean(axis=0)
        if np.all(Gb > 0):
            reps.append(1.0 / _ols(X, np.log(Gb))[0][1])
    xi_se = float(np.std(reps, ddof=1)) if len(reps) > 1 else math.inf
    est = EstimateWithError(1.0 / rate0, xi_se, int(vals.shape[0]), seed, "two-point-loglinear+bootstrap", "xi")
    return CorrelationFit(1.0 / rate0, phi, fits, G, se, est)


# --------------------------------------------------------------------------
# finite-size scaling exponents
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NuBetaResult:
    nu: EstimateWithError
    beta: EstimateWithError
    pc: float
    sizes: list
    widths: np.ndarray
    theta_at_pc: np.ndarray


def _slope(x, y):
    coef, _ = _ols(np.column_stack([np.ones_like(x), x]), y)
    return float(coef[1])


def estimate_nu_beta(samples, pc: float | None = None, n_boot: int = N_BOOT, seed: int = 0) -> NuBetaResult:
    """nu from the width of the crossing window (~ L^(-1/nu)), beta from theta_L(p_c) ~ L^(-beta/nu).

    The window width is the standard deviation of the per-sample crossing
    thresholds; ``theta_L(p_c)`` is the convolved centre-to-boundary curve.
    """
    samples = sorted(samples, key=lambda s: s.spec.L)
    if len(samples) < 3:
        raise ValueError("samples: need at least three box sizes")
    sizes = [s.spec.L for s in samples]
    logL = np.log(sizes)
    if pc is None:
        pc = estimate_pc(samples[0].spec, sizes, seed=seed, mode=samples[0].mode, samples=samples,
                         n_boot=min(n_boot, 50)).value

    def exponents(width, theta):
        inv_nu = -_slope(logL, np.log(width))
        nu = 1.0 / inv_nu
        return nu, -_slope(logL, np.log(theta)) * nu

    widths = np.array([s.p_cross.std(ddof=1) for s in samples])
    thetas = np.array([s.theta_curve().value(pc) for s in samples])
    nu, beta = exponents(widths, thetas)
    rng = np.random.default_rng(derive_seed(seed, 0x5CA1E))
    reps = np.empty((n_boot, 2))
    for b in range(n_boot):
        w_b, t_b = [], []
        for s in samples:
            idx = rng.integers(0, s.n_samples, s.n_samples)
            w_b.append(s.p_cross[idx].std(ddof=1))
            t_b.append(s.theta_curve(idx).value(pc))
        reps[b] = exponents(np.array(w_b), np.array(t_b))
    n = sum(s.n_samples for s in samples)
    se = reps.std(axis=0, ddof=1)
    return NuBetaResult(
        EstimateWithError(nu, float(se[0]), n, seed, "crossing-window-width-fss", "nu"),
        EstimateWithError(beta, float(se[1]), n, seed, "theta-at-pc-fss", "beta"),
        float(pc), sizes, widths, thetas)


@njit(cache=True)
def _tree_survives(rng, k, depth, p):
    # depth-first search of the open cluster of the root, children sampled lazily
    remaining = np.zeros(depth + 1, dtype=np.int64)
    level = 0
    remaining[0] = k
    while level >= 0:
        if level == depth:
            return True
        if remaining[level] == 0:
            level -= 1
            continue
        remaining[level] -= 1
        if rng.random() <= p:
            level += 1
            remaining[level] = k
    return False


def tree_theta(k: int, depth: int, p: float, n_samples: int, seed: int) -> EstimateWithError:
    """P(root connected to depth ``depth``) on the k-ary tree, exploring the cluster lazily."""
    hits = np.empty(n_samples, dtype=bool)
    for s in range(n_samples):
        hits[s] = _tree_survives(generator(seed, s), k, depth, check_p(p))
    return mean_estimate(hits, seed=seed, method="lazy-tree-dfs", name="theta_tree")


def estimate_beta_tree(k: int, p_values, depth: int = 200, n_samples: int = 4000, seed: int = 0) -> EstimateWithError:
    """beta from a log-log fit of theta(p) against p - 1/k just above the tree threshold."""
    p_values = np.asarray(sorted(p_values), dtype=float)
    if np.any(p_values <= 1.0 / k):
        raise ValueError("p_values: must exceed the tree threshold 1/k")
    thetas = [tree_theta(k, depth, p, n_samples, derive_seed(seed, i)) for i, p in enumerate(p_values)]
    th = np.array([t.value for t in thetas])
    se = np.array([t.stderr for t in thetas])
    x = np.log(p_values - 1.0 / k)
    beta = _slope(x, np.log(th))
    rng = np.random.default_rng(derive_seed(seed, 0xBE7A))
    reps = [_slope(x, np.log(np.maximum(th + se * rng.standard_normal(th.size), 1e-12))) for _ in range(N_BOOT)]
    return EstimateWithError(beta, float(np.std(reps, ddof=1)), n_samples * len(p_values), seed,
                             "tree-theta-loglog", "beta_tree")


# --------------------------------------------------------------------------
# diagnostics without acceptance targets
# --------------------------------------------------------------------------

def gap_ratio(histogram: dict, k: int = 1) -> float:
    """``E[|C|^(k+1); finite] / E[|C|^k; finite]`` from a finite-cluster histogram."""
    n = np.array(list(histogram), dtype=float)
    c = np.array(list(histogram.values()), dtype=float)
    return float(np.sum(c * n ** (k + 2)) / np.sum(c * n ** (k + 1)))


def clusters_per_vertex(spec: LatticeSpec, p_grid, n_samples: int, seed: int, mode: str = "bond"):
    """Mean number of clusters per vertex ``E[|C|^-1]`` on a p grid (sweep + convolution).

    Its third derivative in p is the quantity whose divergence defines alpha;
    returned alongside by finite differences.
    """
    from .clusters import convolve, sweep
    from .sampling import assign_labels

    g = build_lattice(spec)
    p_grid = np.asarray(p_grid, dtype=float)
    acc = np.zeros_like(p_grid)
    for s in range(n_samples):
        curve = sweep(assign_labels(g, mode, seed, s), ("n_clusters",))
        acc += [convolve(curve, p, "n_clusters") for p in p_grid]
    kappa = acc / n_samples / g.n_vertices
    third = np.gradient(np.gradient(np.gradient(kappa, p_grid), p_grid), p_grid)
    return kappa, third


def diameter_histogram(spec: LatticeSpec, p: float, n_samples: int, seed: int, mode: str = "site") -> dict:
    """Histogram of Euclidean cluster extents (experimental diagnostic for rho).

    The extent of a cluster is the largest side of its bounding box in
    embedded coordinates, rounded to an integer.
    """
    g = build_lattice(spec)
    pos = g.positions()
    M = element_count(g, mode)
    acc: dict = {}
    for s in range(n_samples):
        is_open = label_stream(seed, s, M) <= p
        root, _, _ = _label(g.n_vertices, g.edges, is_open, mode == "site", g.boundary_bits)
        ok = root >= 0
        r = root[ok]
        uniq, inv = np.unique(r, return_inverse=True)
        ext = np.zeros(uniq.size)
        for ax in range(pos.shape[1]):
            hi = np.full(uniq.size, -np.inf)
            lo = np.full(uniq.size, np.inf)
            np.maximum.at(hi, inv, pos[ok, ax])
            np.minimum.at(lo, inv, pos[ok, ax])
            ext = np.maximum(ext, hi - lo)
        for v, c in zip(*np.unique(np.rint(ext).astype(int), return_counts=True)):
            acc[int(v)] = acc.get(int(v), 0) + int(c)
    return acc


# --------------------------------------------------------------------------
# scaling relations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentSet:
    alpha: float
    beta: float
    gamma: float
    delta: float
    eta: float
    nu: float
    rho: float
    Delta: float
    d: int

    def replace(self, **kw) -> "ExponentSet":
        from dataclasses import replace
        return replace(self, **kw)


F = Fraction
TWO_D_EXPONENTS = ExponentSet(F(-2, 3), F(5, 36), F(43, 18), F(91, 5), F(5, 24), F(4, 3), F(48, 5), F(91, 36), 2)
MEAN_FIELD_EXPONENTS = ExponentSet(F(-1), F(1), F(1), F(2), F(0), F(1, 2), F(1, 2), F(2), 6)


def check_scaling_relations(e: ExponentSet) -> dict:
    """Residuals (left minus right side) of the scaling and hyperscaling relations."""
    return {
        "2-alpha = gamma+2beta": 2 - e.alpha - (e.gamma + 2 * e.beta),
        "2-alpha = beta(delta+1)": 2 - e.alpha - e.beta * (e.delta + 1),
        "Delta = delta*beta": e.Delta - e.delta * e.beta,
        "gamma = nu(2-eta)": e.gamma - e.nu * (2 - e.eta),
        "d*rho = delta+1": e.d * e.rho - (e.delta + 1),
        "d*nu = 2-alpha": e.d * e.nu - (2 - e.alpha),
    }
