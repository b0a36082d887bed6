"""Percolative systems built on the same machinery: gradient percolation,
first-passage percolation, the contact process, oriented percolation and
invasion percolation.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import parallel
from .clusters import _first_events, _label, insertion_order
from .estimators import EstimateWithError, EstimationError, fit_finite_size_shift, mean_estimate
from .lattice import Graph, LatticeSpec, build_lattice
from .sampling import assign_labels, check_p, check_seed, derive_seed, generator, label_stream


# --------------------------------------------------------------------------
# gradient percolation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GradientFront:
    n: int
    heights: np.ndarray
    mean_height: float
    width: float
    seed: int | None = None

    @property
    def relative_height(self) -> float:
        return self.mean_height / self.n


def gradient_percolation(n: int, seed: int = 0, sample: int = 0, labels=None) -> GradientFront:
    """Site percolation on the ``n x n`` square with ``p(x, y) = 1 - y/n``.

    The front of column ``x`` is the highest site of that column in the
    cluster spanning from the bottom row; returns its mean and standard
    deviation over columns.  ``labels`` (one per site, row-major) overrides
    the generated ones.
    """
    if int(n) != n or n < 32:
        raise ValueError(f"n: gradient percolation needs n >= 32, got {n!r}")
    g = build_lattice(LatticeSpec("square", int(n)))
    if labels is None:
        labels = label_stream(check_seed(seed), sample, g.n_vertices)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (g.n_vertices,):
        raise ValueError(f"labels: expected {g.n_vertices} values, got {labels.shape}")
    x, y = g.coords[:, 0], g.coords[:, 1]
    is_open = labels <= 1.0 - y / n
    root, _, mask = _label(g.n_vertices, g.edges, is_open, True, g.boundary_bits)
    bottom = g.boundary_bit("bottom")
    in_front = (root >= 0) & ((mask[np.maximum(root, 0)] & bottom) != 0)
    if not in_front.any():
        raise EstimationError(f"no cluster spans from the bottom row (seed={seed}, sample={sample})")
    heights = np.full(n, -1, dtype=np.int64)
    np.maximum.at(heights, x[in_front], y[in_front])
    if np.any(heights < 0):
        raise EstimationError(f"bottom cluster misses a column (seed={seed}, sample={sample})")
    return GradientFront(int(n), heights, float(heights.mean()), float(heights.std()), seed)


def gradient_front_statistics(n: int, n_samples: int, seed: int):
    """Mean relative front height and mean front width over independent samples."""
    fronts = [gradient_percolation(n, seed, s) for s in range(n_samples)]
    rel = mean_estimate([f.relative_height for f in fronts], seed=seed, method="gradient-front-height",
                        name=f"gradient_height_n{n}")
    width = mean_estimate([f.width for f in fronts], seed=seed, method="gradient-front-width",
                          name=f"gradient_width_n{n}")
    return rel, width


# --------------------------------------------------------------------------
# first-passage percolation
# --------------------------------------------------------------------------

PASSAGE_LAWS = ("exponential", "uniform", "constant")


def passage_times_from_labels(labels: np.ndarray, law: str) -> np.ndarray:
    """Edge passage times by inverse transform of uniform labels."""
    if law == "exponential":
        return -np.log1p(-labels)
    if law == "uniform":
        return np.array(labels, dtype=float)
    if law == "constant":
        return np.ones_like(labels, dtype=float)
    raise ValueError(f"F: must be one of {PASSAGE_LAWS}, got {law!r}")


@njit(cache=True)
def _dijkstra(n, indptr, indices, edge_ids, weights, source):
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=np.bool_)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while len(heap) > 0:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for q in range(indptr[v], indptr[v + 1]):
            u = indices[q]
            nd = d + weights[edge_ids[q]]
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return dist


def first_passage(graph: Graph, weights: np.ndarray, source: int | None = None) -> np.ndarray:
    """``a(source, v)`` for every vertex (best-first search, nonnegative weights)."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (graph.edge_count,) or np.any(weights < 0):
        raise ValueError("weights: need one nonnegative weight per edge")
    src = graph.center if source is None else int(source)
    return _dijkstra(graph.n_vertices, graph.indptr, graph.indices, graph.edge_ids, weights, src)


@dataclass(frozen=True, eq=False)
class PassageTimes:
    edge_times: np.ndarray
    a: np.ndarray
    source: int
    law: str
    graph: Graph
    seed: int | None = None

    def wet(self, t: float) -> np.ndarray:
        return np.flatnonzero(self.a <= t)


@dataclass(frozen=True, eq=False)
class WetRegion:
    t: float
    vertices: np.ndarray
    radii: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.vertices.shape[0])


def fpp_run(spec: LatticeSpec, F: str = "exponential", t_grid=(), seed: int = 0, sample: int = 0):
    """Passage times from the box centre and the wet regions ``W(t)`` for ``t`` in ``t_grid``."""
    g = build_lattice(spec)
    labels = assign_labels(g, "bond", seed, sample).values
    times = passage_times_from_labels(labels, F)
    a = first_passage(g, times)
    pt = PassageTimes(times, a, g.center, F, g, seed)
    return pt, [WetRegion(float(t), pt.wet(t)) for t in t_grid]


def fpp_time_constant(n: int, n_seeds: int, seed: int = 0, F: str = "exponential", margin: int = 16):
    """``a(0, (n, 0)) / n`` averaged over independent seeds."""
    spec = LatticeSpec("square", 2 * (n + margin) + 1)
    vals = []
    for s in range(n_seeds):
        pt, _ = fpp_run(spec, F, (), seed, s)
        cx, cy = pt.graph.coords[pt.source]
        vals.append(pt.a[pt.graph.vertex_at(cx + n, cy)] / n)
    return mean_estimate(vals, seed=seed, method=f"fpp-axis-{F}", name=f"fpp_mu_n{n}")


N_DIRECTIONS = 16


def _ray_radii(coords, member, origin, n_dir, step=0.02):
    lookup = {tuple(c): True for c in coords[member].tolist()}
    radii = np.empty(n_dir)
    for k in range(n_dir):
        th = 2.0 * math.pi * k / n_dir
        c, s = math.cos(th), math.sin(th)
        r = 0.0
        while True:
            r2 = r + step
            px = int(math.floor(origin[0] + r2 * c + 0.5))
            py = int(math.floor(origin[1] + r2 * s + 0.5))
            if (px, py) not in lookup:
                break
            r = r2
        radii[k] = r
    return radii


def fpp_shape(pt: PassageTimes, t: float, n_directions: int = N_DIRECTIONS) -> WetRegion:
    """Radii ``r(theta) / t`` of the fattened wet region along equally spaced directions.

    The fattened region is the union of unit squares centred on ``W(t)``;
    radii are measured from the source to the first exit along each ray.
    """
    g = pt.graph
    if g.coords.shape[1] != 2:
        raise ValueError("spec: shape profiles need a planar grid")
    wet = pt.a <= t
    if wet.sum() < 1000:
        raise EstimationError(f"t: W(t) has {int(wet.sum())} vertices, need at least 1000")
    boundary = g.boundary("boundary")
    if wet[boundary].any():
        raise EstimationError(f"W(t) touches the box boundary at t={t}; enlarge the box")
    radii = _ray_radii(g.coords, wet, g.coords[pt.source], n_directions) / t
    return WetRegion(float(t), np.flatnonzero(wet), radii)


@dataclass(frozen=True, eq=False)
class ShapeProfile:
    t: float
    radii: np.ndarray
    stderr: np.ndarray
    per_seed: np.ndarray

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.radii.size) / self.radii.size

    def symmetry_z(self, quarter: int | None = None) -> np.ndarray:
        """``(r(theta) - r(theta + pi/2)) / combined stderr`` per direction."""
        q = self.radii.size // 4 if quarter is None else quarter
        diff = self.radii - np.roll(self.radii, -q)
        se = np.hypot(self.stderr, np.roll(self.stderr, -q))
        return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))


def fpp_shape_profile(spec: LatticeSpec, t: float, n_seeds: int, seed: int = 0, F: str = "exponential",
                      n_directions: int = N_DIRECTIONS) -> ShapeProfile:
    rows = []
    for s in range(n_seeds):
        pt, _ = fpp_run(spec, F, (), seed, s)
        rows.append(fpp_shape(pt, t, n_directions).radii)
    rows = np.array(rows)
    se = rows.std(axis=0, ddof=1) / math.sqrt(n_seeds) if n_seeds > 1 else np.zeros(n_directions)
    return ShapeProfile(float(t), rows.mean(axis=0), se, rows)


def convexity_violations(radii, stderr=None, n_sigma: float = 3.0) -> float:
    """Fraction of boundary points lying strictly inside the chord of their neighbours.

    Points are ``r_k (cos theta_k, sin theta_k)``; a violation is a right turn
    of the polygon larger than ``n_sigma`` times the radius error.
    """
    r = np.asarray(radii, dtype=float)
    k = r.size
    th = 2.0 * np.pi * np.arange(k) / k
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    prev, nxt = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
    # signed distance of each point beyond the chord joining its neighbours (outward positive)
    chord = nxt - prev
    normal = np.column_stack([chord[:, 1], -chord[:, 0]]) / np.linalg.norm(chord, axis=1)[:, None]
    excess = np.einsum("ij,ij->i", pts - prev, normal)
    tol = 0.0 if stderr is None else n_sigma * np.asarray(stderr, dtype=float)
    return float(np.mean(excess < -tol - 1e-12))


# --------------------------------------------------------------------------
# contact process
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContactResult:
    """Outcome of one contact-process run.

    ``population`` is sampled on ``t_grid``; ``full_first`` tells whether every
    site of the box was occupied before extinction.
    """

    survived: bool
    extinction_time: float
    t_grid: np.ndarray
    population: np.ndarray
    n_events: int
    full_first: bool
    final: np.ndarray
    seed: int | None = None
    sample: int | None = None


def box_neighbours(d: int, box_L: int) -> np.ndarray:
    """``(L^d, 2d)`` table of neighbours in the box, ``-1`` outside."""
    n = box_L ** d
    coords = np.stack(np.unravel_index(np.arange(n), (box_L,) * d), axis=1)
    out = np.full((n, 2 * d), -1, dtype=np.int64)
    strides = box_L ** np.arange(d - 1, -1, -1)
    for k in range(d):
        up = coords[:, k] < box_L - 1
        down = coords[:, k] > 0
        out[up, 2 * k] = np.arange(n)[up] + strides[k]
        out[down, 2 * k + 1] = np.arange(n)[down] - strides[k]
    return out


@njit(cache=True)
def _contact(rng, nbr, lam, t_max, initial, t_grid):
    n = nbr.shape[0]
    deg = nbr.shape[1]
    occ = np.zeros(n, dtype=np.bool_)
    pos = np.full(n, -1, dtype=np.int64)
    parts = np.empty(n, dtype=np.int64)
    m = 0
    for v in initial:
        if not occ[v]:
            occ[v] = True
            parts[m] = v
            pos[v] = m
            m += 1
    pop = np.zeros(t_grid.shape[0], dtype=np.int64)
    g = 0
    t = 0.0
    events = 0
    full_first = m == n
    p_death = 1.0 / (1.0 + deg * lam)
    while m > 0:
        t_next = t + rng.exponential(1.0 / (m * (1.0 + deg * lam)))
        while g < t_grid.shape[0] and t_grid[g] < t_next:
            pop[g] = m
            g += 1
        if t_next > t_max:
            break
        t = t_next
        events += 1
        i = rng.integers(0, m)
        v = parts[i]
        if rng.random() < p_death:
            last = parts[m - 1]
            parts[i] = last
            pos[last] = i
            pos[v] = -1
            occ[v] = False
            m -= 1
        else:
            u = nbr[v, rng.integers(0, deg)]
            if u >= 0 and not occ[u]:
                occ[u] = True
                parts[m] = u
                pos[u] = m
                m += 1
                if m == n:
                    full_first = True
    ext = t if m == 0 else np.inf
    return m > 0, ext, pop, events, full_first, occ


def contact_simulate(d: int, box_L: int, lam: float, t_max: float, initial, seed: int, sample: int = 0,
                     t_grid=None) -> ContactResult:
    """Event-driven contact process in the box ``{0..box_L-1}^d``.

    Each particle dies at rate 1 and tries to give birth onto each of its
    ``2d`` neighbouring positions at rate ``lam``; attempts onto occupied
    sites or outside the box are discarded.
    """
    if lam < 0:
        raise ValueError(f"lambda: must be >= 0, got {lam!r}")
    if d < 1 or box_L < 1:
        raise ValueError("d, box_L: must be positive")
    initial = np.unique(np.asarray(initial, dtype=np.int64))
    n = box_L ** d
    if initial.size == 0 or initial.min() < 0 or initial.max() >= n:
        raise ValueError("initial: need a nonempty set of sites inside the box")
    t_grid = np.linspace(0.0, t_max, 101) if t_grid is None else np.asarray(t_grid, dtype=float)
    nbr = box_neighbours(d, box_L)
    survived, ext, pop, events, full_first, occ = _contact(generator(seed, sample), nbr, float(lam),
                                                           float(t_max), initial, t_grid)
    return ContactResult(bool(survived), float(ext), t_grid, pop, int(events), bool(full_first),
                         np.flatnonzero(occ), seed, sample)


def _contact_chunk(start, stop, d, box_L, lam, t_max, initial, seed):
    out = np.zeros((stop - start, 2), dtype=bool)
    for row, s in enumerate(range(start, stop)):
        r = contact_simulate(d, box_L, lam, t_max, initial, seed, s, t_grid=np.zeros(0))
        out[row] = (r.survived, r.full_first)
    return out


def contact_survival(d: int, box_L: int, lam: float, t_max: float, n_runs: int, seed: int,
                     initial=None) -> EstimateWithError:
    """Fraction of runs still alive at ``t_max`` (default start: the centre site)."""
    if initial is None:
        initial = [sum((box_L // 2) * box_L ** k for k in range(d))]
    flags = parallel.map_chunks(_contact_chunk, n_runs, d, box_L, float(lam), float(t_max),
                                np.asarray(initial, dtype=np.int64), check_seed(seed), chunk=64)
    return mean_estimate(flags[:, 0], seed=seed, method="gillespie-contact", name=f"contact_survival_l{lam:g}")


def contact_full_before_extinction(box_L: int, lam: float, n_runs: int, seed: int, initial=(0,),
                                   t_max: float = 1e6) -> EstimateWithError:
    """Probability that a 1D box becomes fully occupied before extinction."""
    flags = parallel.map_chunks(_contact_chunk, n_runs, 1, box_L, float(lam), float(t_max),
                                np.asarray(initial, dtype=np.int64), check_seed(seed), chunk=64)
    return mean_estimate(flags[:, 1], seed=seed, method="gillespie-contact", name="contact_full_first")


def write_population_csv(path, result: ContactResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "population"])
        for t, p in zip(result.t_grid.tolist(), result.population.tolist()):
            w.writerow([repr(t), p])


# --------------------------------------------------------------------------
# oriented percolation
# --------------------------------------------------------------------------

@njit(cache=True)
def _minimax(n, edges, labels):
    # edges are sorted by source and every edge points to a larger vertex id
    tau = np.full(n, np.inf)
    tau[0] = 0.0
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        c = max(tau[a], labels[e])
        if c < tau[b]:
            tau[b] = c
    return tau


def oriented_thresholds(L: int, labels: np.ndarray, graph: Graph | None = None):
    """Oriented and unoriented threshold of ``origin -> level L`` for one label set.

    The oriented threshold is the smallest ``p`` at which an open oriented
    path exists (min over paths of the max label); the unoriented one comes
    from a sweep on the same edges without orientation.
    """
    g = graph if graph is not None else build_lattice(LatticeSpec("oriented", int(L), d=1))
    tau = _minimax(g.n_vertices, g.edges, labels)
    oriented = float(tau[g.boundary("level")].min())
    order = insertion_order(labels)
    cross = g.boundary_bit("origin") | g.boundary_bit("level")
    m, _ = _first_events(g.n_vertices, False, g.edges, g.indptr, g.indices, order, g.boundary_bits,
                         cross, g.center, 0)
    unoriented = float(labels[order[m - 1]]) if m > 0 else 0.0
    return oriented, unoriented


def _oriented_chunk(start, stop, graph, seed):
    out = np.zeros((stop - start, 2))
    for row, s in enumerate(range(start, stop)):
        out[row] = oriented_thresholds(0, label_stream(seed, s, graph.edge_count), graph)
    return out


def oriented_threshold_samples(L: int, n_samples: int, seed: int) -> np.ndarray:
    """``(n_samples, 2)`` array of (oriented, unoriented) thresholds for the 1+1 wedge of height ``L``."""
    g = build_lattice(LatticeSpec("oriented", int(L), d=1))
    return parallel.map_chunks(_oriented_chunk, n_samples, g, check_seed(seed))


def oriented_crossing(L: int, p: float, n_samples: int, seed: int = 0) -> EstimateWithError:
    """Probability of an open oriented path from the origin to level ``L``."""
    th = oriented_threshold_samples(L, n_samples, seed)
    return mean_estimate(th[:, 0] <= check_p(p), seed=seed, method="oriented-minimax",
                         name=f"oriented_crossing_L{L}")


@dataclass(frozen=True, eq=False)
class OrientedPc:
    estimate: EstimateWithError
    sizes: list
    p_L: np.ndarray
    p_L_stderr: np.ndarray

    @property
    def value(self) -> float:
        return self.estimate.value


# numerical literature value for 1+1 oriented bond percolation
ORIENTED_BOND_PC = 0.644701


def estimate_oriented_pc(L_list, n_samples: int = 1000, seed: int = 0, n_boot: int = 200) -> OrientedPc:
    """1/2-point of the origin-to-level-L crossing probability, extrapolated in L.

    With continuous labels the crossing probability at ``p`` is exactly the
    fraction of thresholds below ``p``, so the 1/2-point is the median.
    """
    L_list = sorted(int(L) for L in L_list)
    if len(L_list) < 2:
        raise ValueError("L_list: need at least two sizes")
    samples = [oriented_threshold_samples(L, n_samples, derive_seed(seed, L))[:, 0] for L in L_list]
    p_L = np.array([np.median(s) for s in samples])
    rng = np.random.default_rng(derive_seed(seed, 0x0E1))
    boot = np.array([[np.median(s[rng.integers(0, s.size, s.size)]) for s in samples] for _ in range(n_boot)])
    se_L = boot.std(axis=0, ddof=1)
    w = 1.0 / np.maximum(se_L, 1e-6) ** 2
    _, pc, _, _ = fit_finite_size_shift(L_list, p_L, w)
    se = float(np.std([fit_finite_size_shift(L_list, row, w)[1] for row in boot], ddof=1))
    est = EstimateWithError(float(pc), se, n_samples * len(L_list), seed, "oriented-median+fss",
                            "oriented_pc")
    return OrientedPc(est, L_list, p_L, se_L)


# --------------------------------------------------------------------------
# invasion percolation
# --------------------------------------------------------------------------

@njit(cache=True)
def _invade(n, indptr, indices, edge_ids, labels, source, steps, bits, stop_mask):
    in_cluster = np.zeros(n, dtype=np.bool_)
    edge_done = np.zeros(labels.shape[0], dtype=np.bool_)
    seq = np.full(steps, -1, dtype=np.int64)
    in_cluster[source] = True
    heap = [(labels[0], np.int64(0), np.int64(0))]
    heap.pop()
    for q in range(indptr[source], indptr[source + 1]):
        heapq.heappush(heap, (labels[edge_ids[q]], edge_ids[q], indices[q]))
    for i in range(steps):
        if len(heap) == 0:
            return seq, in_cluster, i, False
        while True:
            lab, e, v = heapq.heappop(heap)
            if not edge_done[e]:
                break
        edge_done[e] = True
        seq[i] = e
        if not in_cluster[v]:
            in_cluster[v] = True
            if bits[v] & stop_mask:
                return seq, in_cluster, i + 1, True
            for q in range(indptr[v], indptr[v + 1]):
                f = edge_ids[q]
                if not edge_done[f]:
                    heapq.heappush(heap, (labels[f], f, indices[q]))
    return seq, in_cluster, steps, False


@dataclass(frozen=True, eq=False)
class InvasionState:
    """Invaded cluster after ``steps`` invasions: edge sequence (in order) and vertex set."""

    edges: np.ndarray
    vertices: np.ndarray
    labels: np.ndarray
    graph: Graph
    source: int

    @property
    def steps(self) -> int:
        return int(self.edges.shape[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "edge", "label"])
            for i, e in enumerate(self.edges.tolist()):
                w.writerow([i + 1, e, repr(float(self.labels[e]))])


def invasion_run(spec: LatticeSpec, seed: int, steps: int, sample: int = 0, labels=None) -> InvasionState:
    """Invade ``steps`` edges from the box centre, always taking the lowest-label frontier edge.

    The frontier is every not-yet-invaded edge with an endpoint in the
    cluster.  Reaching the box boundary raises an error.
    """
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps: must be a positive integer, got {steps!r}")
    g = build_lattice(spec)
    if labels is None:
        labels = assign_labels(g, "bond", seed, sample).values
    labels = np.ascontiguousarray(labels, dtype=float)
    stop = g.boundary_bit("boundary")
    seq, in_cluster, done, hit = _invade(g.n_vertices, g.indptr, g.indices, g.edge_ids, labels, g.center,
                                         int(steps), g.boundary_bits, stop)
    if hit:
        raise EstimationError(f"invasion reached the box boundary after {done} steps; enlarge the box")
    if done < steps:
        raise EstimationError(f"frontier exhausted after {done} steps")
    return InvasionState(seq, np.flatnonzero(in_cluster), labels, g, g.center)


def _axis_points(g: Graph, r: int) -> np.ndarray:
    cx, cy = g.coords[g.center]
    return np.array([g.vertex_at(cx + r, cy), g.vertex_at(cx - r, cy),
                     g.vertex_at(cx, cy + r), g.vertex_at(cx, cy - r)])


def _invasion_chunk(start, stop, spec, seed, steps, radii):
    out = np.zeros((stop - start, len(radii)))
    for row, s in enumerate(range(start, stop)):
        st = invasion_run(spec, seed, steps, sample=s)
        member = np.zeros(st.graph.n_vertices, dtype=bool)
        member[st.vertices] = True
        for k, r in enumerate(radii):
            out[row, k] = member[_axis_points(st.graph, r)].mean()
    return out


def invasion_hit_probability(radii, runs: int, seed: int = 0, steps: int = 5000,
                             spec: LatticeSpec | None = None) -> list[EstimateWithError]:
    """``P{x in C}`` after ``steps`` invasions for axis points at each distance (4 points per run)."""
    spec = spec or LatticeSpec("square", 1001)
    radii = [int(r) for r in radii]
    vals = parallel.map_chunks(_invasion_chunk, runs, spec, check_seed(seed), int(steps), radii, chunk=16)
    return [mean_estimate(vals[:, k], seed=seed, method="invasion-axis-hits", name=f"invasion_hit_r{r}")
            for k, r in enumerate(radii)]
