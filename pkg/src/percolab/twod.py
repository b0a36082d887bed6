"""Two-dimensional specifics: the self-dual crossing identity, RSW-type
crossing and circuit probabilities, Cardy's formula on the equilateral
triangle, exploration paths and box-counting dimensions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from . import parallel
from .clusters import _label, _set_mask
from .estimators import EstimateWithError, EstimationError, mean_estimate
from .lattice import Graph, LatticeSpec, build_lattice, build_triangle_domain
from .sampling import check_mode, check_p, check_seed, derive_seed, element_count, label_stream

SQRT3_2 = math.sqrt(3.0) / 2.0


# --------------------------------------------------------------------------
# crossing probabilities
# --------------------------------------------------------------------------

def _crossing_chunk(start, stop, graph, mode, p, seed, both):
    M = element_count(graph, mode)
    site = mode == "site"
    out = np.zeros(stop - start, dtype=bool)
    for row, s in enumerate(range(start, stop)):
        is_open = label_stream(seed, s, M) <= p
        root, _, mask = _label(graph.n_vertices, graph.edges, is_open, site, graph.boundary_bits)
        r = root[root >= 0]
        out[row] = np.any((mask[r] & both) == both)
    return out


def crossing_probability(graph: Graph, mode: str, p: float, n_samples: int, seed: int,
                         sets=("left", "right"), name: str = "crossing") -> EstimateWithError:
    """Monte Carlo probability that one open cluster touches both ``sets``."""
    both = _set_mask(graph, *sets)
    hits = parallel.map_chunks(_crossing_chunk, n_samples, graph, check_mode(mode), check_p(p),
                               check_seed(seed), both)
    return mean_estimate(hits, seed=seed, method=f"mc-crossing-{mode}", name=name)


@njit(cache=True)
def _enumerate(n, edges, site, bits, both, n_elements):
    counts = np.zeros(n_elements + 1, dtype=np.int64)
    is_open = np.zeros(n_elements, dtype=np.bool_)
    for conf in range(1 << n_elements):
        k = 0
        for e in range(n_elements):
            o = (conf >> e) & 1
            is_open[e] = o == 1
            k += o
        root, _, mask = _label(n, edges, is_open, site, bits)
        for v in range(n):
            r = root[v]
            if r >= 0 and (mask[r] & both) == both:
                counts[k] += 1
                break
    return counts


def crossing_polynomial(graph: Graph, mode: str = "bond", sets=("left", "right")) -> np.ndarray:
    """Exhaustive enumeration: ``c[k]`` = number of crossing configurations with ``k`` open elements.

    The crossing probability is ``sum_k c[k] p^k (1-p)^(M-k)``.  Limited to
    ``M <= 24`` elements.
    """
    M = element_count(graph, check_mode(mode))
    if M > 24:
        raise ValueError(f"graph: {M} elements is too many to enumerate (max 24)")
    return _enumerate(graph.n_vertices, graph.edges, mode == "site", graph.boundary_bits,
                      _set_mask(graph, *sets), M)


def evaluate_polynomial(counts, p) -> Fraction | float:
    """Crossing probability from :func:`crossing_polynomial`; exact when ``p`` is a Fraction."""
    M = len(counts) - 1
    return sum(int(c) * p ** k * (1 - p) ** (M - k) for k, c in enumerate(counts))


def selfdual_box(n: int) -> LatticeSpec:
    """Bond-square box with ``n + 1`` columns and ``n`` rows of vertices."""
    if int(n) != n or n < 1:
        raise ValueError(f"n: must be a positive integer, got {n!r}")
    return LatticeSpec("square", int(n) + 1, Ly=int(n))


def selfdual_crossing_exact(n: int) -> Fraction:
    """Exact long-direction crossing probability of the ``(n+1) x n`` box at p = 1/2."""
    counts = crossing_polynomial(build_lattice(selfdual_box(n)))
    return Fraction(int(sum(int(c) for c in counts)), 2 ** (len(counts) - 1))


def selfdual_crossing_test(n: int, n_samples: int, seed: int) -> EstimateWithError:
    """Monte Carlo long-direction crossing of the ``(n+1) x n`` bond box at p = 1/2."""
    g = build_lattice(selfdual_box(n))
    return crossing_probability(g, "bond", 0.5, n_samples, seed, name=f"selfdual_crossing_n{n}")


# --------------------------------------------------------------------------
# RSW boxes and annuli
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RSWResult:
    kind: str
    n_list: list
    estimates: list
    aspect: tuple | None = None
    modulus: float | None = None

    @property
    def minimum(self) -> float:
        return min(e.value for e in self.estimates)

    @property
    def maximum(self) -> float:
        return max(e.value for e in self.estimates)

    @property
    def ratio(self) -> float:
        return self.maximum / self.minimum if self.minimum > 0 else math.inf


def _critical(kind: str, mode: str) -> float:
    if (kind, mode) in (("square", "bond"), ("triangular", "site")):
        return 0.5
    raise ValueError(f"lattice: RSW checks run on bond-square or site-triangular, got {mode}-{kind}")


def rsw_box(a: float, b: float, n_list, n_samples: int, seed: int, kind: str = "square",
            mode: str = "bond") -> RSWResult:
    """Critical probability of a left-right crossing of the ``floor(na) x floor(nb)`` rectangle."""
    p = _critical(kind, mode)
    out = []
    for n in n_list:
        w, h = int(math.floor(n * a)), int(math.floor(n * b))
        if w < 1 or h < 1:
            raise ValueError(f"n_list: rectangle {w}x{h} is empty at n={n}")
        g = build_lattice(LatticeSpec(kind, w, Ly=h))
        out.append(crossing_probability(g, mode, p, n_samples, derive_seed(seed, n),
                                        name=f"rsw_box_{w}x{h}"))
    return RSWResult("box", list(n_list), out, aspect=(a, b))


def _annulus_chunk(start, stop, graph, seed, in_annulus, bits, both):
    M = graph.n_vertices
    out = np.zeros(stop - start, dtype=bool)
    for row, s in enumerate(range(start, stop)):
        closed = (label_stream(seed, s, M) > 0.5) & in_annulus
        root, _, mask = _label(M, graph.edges, closed, True, bits)
        r = root[root >= 0]
        # an open circuit exists iff no closed path joins the two boundaries
        out[row] = not np.any((mask[r] & both) == both)
    return out


def annulus_graph(n: int, modulus: float = 2.0):
    """Site-triangular rhombic annulus with inner side ``n`` and conformal modulus ``log(R / r)``.

    The outer rhombus has side ``round(n * exp(modulus))`` and the hole is
    centred in it.  Returns the full-rhombus graph, the annulus membership
    mask and boundary bit masks (bit 0 outer boundary, bit 1 sites next to
    the hole).
    """
    N = int(round(n * math.exp(modulus)))
    if N < n + 2:
        raise ValueError(f"modulus: annulus of inner side {n} has no room at modulus {modulus}")
    g = build_lattice(LatticeSpec("triangular", N))
    x, y = g.coords[:, 0], g.coords[:, 1]
    lo = (N - n) // 2
    hole = (x >= lo) & (x < lo + n) & (y >= lo) & (y < lo + n)
    in_annulus = ~hole
    near = np.zeros(g.n_vertices, dtype=bool)
    src, dst = g.edges[:, 0], g.edges[:, 1]
    near[src[hole[dst]]] = True
    near[dst[hole[src]]] = True
    near &= in_annulus
    outer = np.zeros(g.n_vertices, dtype=bool)
    outer[g.boundary("boundary")] = True
    bits = outer.astype(np.int64) | (near.astype(np.int64) << 1)
    return g, in_annulus, bits


def rsw_annulus(n_list, n_samples: int, seed: int, modulus: float = 2.0) -> RSWResult:
    """Critical probability of an open circuit around a rhombic annulus (site-triangular)."""
    out = []
    for n in n_list:
        g, in_annulus, bits = annulus_graph(int(n), modulus)
        hits = parallel.map_chunks(_annulus_chunk, n_samples, g, check_seed(derive_seed(seed, n)),
                                   in_annulus, bits, np.int64(3))
        out.append(mean_estimate(hits, seed=seed, method="mc-closed-dual-crossing", name=f"annulus_n{n}"))
    return RSWResult("annulus", list(n_list), out, modulus=modulus)


def rsw_box_and_annulus(a: float, b: float, n_list, n_samples: int, seed: int = 0, modulus: float = 2.0,
                        kind: str = "triangular", mode: str = "site"):
    """Box-crossing and annulus-circuit probabilities across scales."""
    return (rsw_box(a, b, n_list, n_samples, seed, kind, mode),
            rsw_annulus(n_list, n_samples, derive_seed(seed, 0xA22), modulus))


# --------------------------------------------------------------------------
# Cardy's formula on the equilateral triangle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CardyResult:
    x: float
    delta: float
    f_estimate: EstimateWithError

    @property
    def f(self) -> float:
        return self.f_estimate.value


def _cardy_chunk(start, stop, graph, seed, ab_bit, side_ids, side_j):
    M = graph.n_vertices
    out = np.zeros(stop - start, dtype=np.int64)
    for row, s in enumerate(range(start, stop)):
        is_open = label_stream(seed, s, M) <= 0.5
        root, _, mask = _label(M, graph.edges, is_open, True, graph.boundary_bits)
        r = root[side_ids]
        ok = r >= 0
        ok[ok] = (mask[r[ok]] & ab_bit) != 0
        out[row] = side_j[ok].max() if ok.any() else -1
    return out


def cardy_levels(delta: float, n_samples: int, seed: int):
    """Per sample, the highest row ``J`` on side ``ca`` joined to ``ab`` by an open path.

    The ``ab``-``cd`` crossing for arc parameter ``x`` holds iff ``J`` reaches
    the first row of ``cd``, so one labelling answers every ``x``.
    """
    g = build_triangle_domain(0.5, delta)
    side = g.boundary("ca")
    N = int(round(1.0 / delta))
    return N, parallel.map_chunks(_cardy_chunk, n_samples, g, check_seed(seed), g.boundary_bit("ab"),
                                  side, g.coords[side, 1])


def cardy_crossing(x_values, delta_list, n_samples: int, seed: int = 0) -> list[CardyResult]:
    """Crossing probability ``f_delta(ab, cd)`` of critical site percolation on the unit triangle."""
    x_values = [float(x) for x in np.atleast_1d(x_values)]
    out = []
    for delta in delta_list:
        N, J = cardy_levels(delta, n_samples, derive_seed(seed, int(round(1.0 / delta))))
        for x in x_values:
            if not 0.0 < x < 1.0:
                raise ValueError(f"x: must lie in (0, 1), got {x!r}")
            j_d = int(math.ceil(N * (1.0 - x) - 1e-9))
            if j_d < 1:
                raise ValueError(f"x: arc cd meets arc ab at delta={delta}")
            est = mean_estimate(J >= j_d, seed=seed, method="mc-cardy-triangle", name=f"cardy_x{x:g}")
            out.append(CardyResult(x, float(delta), est))
    return out


def cardy_trend(results: list[CardyResult], x: float) -> EstimateWithError:
    """Linear-in-delta extrapolation of ``f_delta(x)`` to ``delta = 0`` (needs two meshes)."""
    rows = sorted((r for r in results if r.x == x), key=lambda r: r.delta)
    if len(rows) < 2:
        raise EstimationError("cardy_trend: need at least two meshes")
    d = np.array([r.delta for r in rows])
    f = np.array([r.f for r in rows])
    s = np.array([r.f_estimate.stderr for r in rows])
    X = np.column_stack([np.ones_like(d), d])
    W = 1.0 / np.maximum(s, 1e-9) ** 2
    cov = np.linalg.inv(X.T @ (X * W[:, None]))
    coef = cov @ (X.T @ (W * f))
    return EstimateWithError(float(coef[0]), float(math.sqrt(cov[0, 0])),
                             sum(r.f_estimate.n_samples for r in rows), rows[0].f_estimate.seed,
                             "linear-mesh-extrapolation", f"cardy_limit_x{x:g}")


# --------------------------------------------------------------------------
# exploration path
# --------------------------------------------------------------------------

# neighbour offsets of the sheared triangular grid, counter-clockwise
DIRS = np.array([(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)], dtype=np.int64)


@dataclass(frozen=True)
class ExplorationRegion:
    """Window ``|x + y/2| < width/2``, ``0 <= y < height`` of the sheared triangular grid.

    Row ``y = -1`` is the boundary: open for ``x < 0`` and closed for ``x >= 0``.
    """

    width: int
    height: int

    def __post_init__(self):
        if self.height < 4:
            raise ValueError(f"height: region too small, need at least 4 rows (got {self.height})")
        if self.width < 4:
            raise ValueError(f"width: region too small, need at least 4 columns (got {self.width})")

    @property
    def x_min(self) -> int:
        return -(self.width // 2) - self.height // 2 - 1

    @property
    def grid_width(self) -> int:
        return self.width // 2 + 1 - self.x_min

    @property
    def n_sites(self) -> int:
        return self.grid_width * self.height

    def site_index(self, x, y):
        return (np.asarray(y) * self.grid_width + (np.asarray(x) - self.x_min)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ExplorationPath:
    """Interface between the open cluster of the negative half-line and the closed one of the positive.

    ``left`` and ``right`` are the (x, y) grid coordinates of the open and
    closed site bordering each step; ``points`` are the real-plane positions
    of the visited hexagon vertices (triangle centres).
    """

    points: np.ndarray
    left: np.ndarray
    right: np.ndarray
    region: ExplorationRegion
    boundary: str = "open x<0, closed x>=0 on row y=-1"
    seed: int | None = None
    sample: int | None = None

    @property
    def n_steps(self) -> int:
        return int(self.points.shape[0]) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "x", "y"])
            for i, (px, py) in enumerate(self.points.tolist()):
                w.writerow([i, repr(px), repr(py)])


@njit(cache=True)
def _explore(open_sites, grid_w, x_min, width, height, dirs, max_steps):
    lx, ly = -1, -1
    rx, ry = 0, -1
    k = 0
    left = np.empty((max_steps, 2), dtype=np.int64)
    right = np.empty((max_steps, 2), dtype=np.int64)
    n = 0
    half = width / 2.0
    while n < max_steps:
        left[n, 0] = lx
        left[n, 1] = ly
        right[n, 0] = rx
        right[n, 1] = ry
        n += 1
        k1 = (k + 1) % 6
        tx = lx + dirs[k1, 0]
        ty = ly + dirs[k1, 1]
        if ty >= height or abs(tx + 0.5 * ty) >= half:
            break
        if ty < 0:
            t_open = tx < 0
        else:
            t_open = open_sites[ty * grid_w + tx - x_min]
        if t_open:
            lx, ly = tx, ty
            k = (k + 5) % 6
        else:
            rx, ry = tx, ty
            k = k1
    return left[:n], right[:n]


def _embed(xy):
    xy = np.asarray(xy, dtype=float)
    return np.column_stack([xy[:, 0] + 0.5 * xy[:, 1], SQRT3_2 * xy[:, 1]])


def extract_exploration_path(region: ExplorationRegion, labels=None, seed: int = 0, sample: int = 0,
                             p: float = 0.5) -> ExplorationPath:
    """Follow the interface with the open sites on its left until it leaves ``region``.

    ``labels`` (one per grid site, see :meth:`ExplorationRegion.site_index`)
    overrides the generated labels; a site is open when its label is ``<= p``.
    """
    if labels is None:
        labels = label_stream(check_seed(seed), sample, region.n_sites)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (region.n_sites,):
        raise ValueError(f"labels: expected {region.n_sites} values, got {labels.shape}")
    open_sites = labels <= check_p(p)
    max_steps = 2 * region.n_sites + 4
    left, right = _explore(open_sites, region.grid_width, region.x_min, region.width, region.height,
                           DIRS, max_steps)
    # hexagon vertex between the pair and the next third site: centre of the triangle
    third = left + DIRS[(_step_dirs(left, right) + 1) % 6]
    centres = (_embed(left) + _embed(right) + _embed(third)) / 3.0
    return ExplorationPath(centres, left, right, region, seed=seed, sample=sample)


def _step_dirs(left, right):
    d = right - left
    lookup = {tuple(v): i for i, v in enumerate(DIRS.tolist())}
    return np.array([lookup[tuple(v)] for v in d.tolist()], dtype=np.int64)


def exploration_paths(width: int, n_paths: int, seed: int, height: int | None = None) -> list[ExplorationPath]:
    region = ExplorationRegion(width, height or width)
    return [extract_exploration_path(region, seed=seed, sample=s) for s in range(n_paths)]


# --------------------------------------------------------------------------
# box counting
# --------------------------------------------------------------------------

def dyadic_scales(size: float, smallest: int = 2) -> list[int]:
    """Powers of two from ``smallest`` up to ``size / 8``."""
    out = []
    s = smallest
    while s <= size / 8.0:
        out.append(s)
        s *= 2
    return out


def box_count(points, scale: float) -> int:
    pts = np.asarray(points, dtype=float)
    cells = np.floor(pts / scale).astype(np.int64)
    return int(np.unique(cells, axis=0).shape[0])


def line_control(width: int) -> np.ndarray:
    """``width`` unit-spaced points on a horizontal segment (dimension 1)."""
    return np.column_stack([np.arange(width, dtype=float), np.zeros(width)])


def block_control(width: int) -> np.ndarray:
    """All integer points of a ``width x width`` square (dimension 2)."""
    g = np.arange(width, dtype=float)
    x, y = np.meshgrid(g, g)
    return np.column_stack([x.ravel(), y.ravel()])


def box_counting_dimension(paths, scales=None, min_paths: int = 1) -> EstimateWithError:
    """Slope of mean ``log N(s)`` against ``log(1/s)``; stderr from the spread of per-path slopes.

    ``paths`` is a sequence of :class:`ExplorationPath` or of point arrays.
    """
    arrays = [p.points if isinstance(p, ExplorationPath) else np.asarray(p, dtype=float) for p in paths]
    if len(arrays) < min_paths:
        raise EstimationError(f"paths: need at least {min_paths} paths, got {len(arrays)}")
    if scales is None:
        extent = min(float(np.ptp(a, axis=0).max()) for a in arrays)
        size = arrays[0].shape[0] if extent == 0 else extent
        if isinstance(paths[0], ExplorationPath):
            size = paths[0].region.width
        scales = dyadic_scales(size)
    scales = np.asarray(sorted(scales), dtype=float)
    if scales.size < 3 or scales[-1] < 4 * scales[0]:
        raise EstimationError("scales: need at least 3 scales spanning a factor of 4")
    logs = np.array([[math.log(box_count(a, s)) for s in scales] for a in arrays])
    x = -np.log(scales)
    slope = float(np.polyfit(x, logs.mean(axis=0), 1)[0])
    if len(arrays) > 1:
        per = np.array([np.polyfit(x, row, 1)[0] for row in logs])
        se = float(per.std(ddof=1) / math.sqrt(len(arrays)))
    else:
        se = float("nan")
    return EstimateWithError(slope, se, len(arrays), None, "box-counting-dyadic", "box_dimension")

