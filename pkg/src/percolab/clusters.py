"""Cluster labelling with a disjoint-set forest, crossings and single-sweep curves.

The forest uses union by size with path halving.  Each root also carries the
OR of the boundary bitmasks of its members, so "does this cluster touch both
the left and the right side" is a single mask test.

Bond-mode convention: a vertex with no open incident edge is a cluster of
size 1, so ``|C(v)| >= 1`` always.  In site mode closed vertices belong to no
cluster (root ``-1``, size 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from .lattice import Graph
from .sampling import Configuration, UniformLabels, check_mode

SWEEP_OBSERVABLES = ("crossing", "largest", "n_clusters", "sum_sq", "theta")


# --------------------------------------------------------------------------
# disjoint-set kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _find(parent, v):
    while parent[v] != v:
        parent[v] = parent[parent[v]]
        v = parent[v]
    return v


@njit(cache=True)
def _union(parent, size, mask, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return ra
    if size[ra] < size[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    size[ra] += size[rb]
    mask[ra] |= mask[rb]
    return ra


@njit(cache=True)
def _label(n, edges, is_open, site, bits):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    mask = bits.copy()
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        if site:
            if is_open[a] and is_open[b]:
                _union(parent, size, mask, a, b)
        elif is_open[e]:
            _union(parent, size, mask, a, b)
    root = np.empty(n, dtype=np.int64)
    for v in range(n):
        if site and not is_open[v]:
            root[v] = -1
        else:
            root[v] = _find(parent, v)
    return root, size, mask


@njit(cache=True)
def _fix_ties(order, labels):
    # equal labels are ordered by element id
    m = order.shape[0]
    i = 0
    while i < m - 1:
        j = i
        while j + 1 < m and labels[order[j + 1]] == labels[order[i]]:
            j += 1
        if j > i:
            seg = np.sort(order[i:j + 1])
            order[i:j + 1] = seg
        i = j + 1


def insertion_order(values: np.ndarray) -> np.ndarray:
    """Element ids in increasing label order, ties by id."""
    order = np.argsort(values)
    _fix_ties(order, values)
    return order


@njit(cache=True)
def _first_events(n, site, edges, indptr, indices, order, bits, cross_mask, center, theta_mask):
    """Insertion counts at which the crossing / centre-to-boundary events first hold."""
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    mask = bits.copy()
    is_open = np.zeros(n, dtype=np.bool_)
    m_cross = -1
    m_theta = -1
    if not site:
        for v in range(n):
            if cross_mask != 0 and (bits[v] & cross_mask) == cross_mask:
                m_cross = 0
        if theta_mask == 0 or (bits[center] & theta_mask) != 0:
            m_theta = 0
    if cross_mask == 0:
        m_cross = 0
    if theta_mask == 0:
        m_theta = 0
    for k in range(order.shape[0]):
        if m_cross >= 0 and m_theta >= 0:
            break
        el = order[k]
        if site:
            v = el
            is_open[v] = True
            r = v
            for q in range(indptr[v], indptr[v + 1]):
                u = indices[q]
                if is_open[u]:
                    r = _union(parent, size, mask, v, u)
            r = _find(parent, v)
        else:
            r = _union(parent, size, mask, edges[el, 0], edges[el, 1])
        if m_cross < 0 and (mask[r] & cross_mask) == cross_mask:
            m_cross = k + 1
        if m_theta < 0:
            if (not site) or is_open[center]:
                if mask[_find(parent, center)] & theta_mask:
                    m_theta = k + 1
    return m_cross, m_theta


@njit(cache=True)
def _sweep(n, site, edges, indptr, indices, order, bits, cross_mask, center, theta_mask):
    M = order.shape[0]
    out = np.zeros((M + 1, 5))
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    mask = bits.copy()
    is_open = np.zeros(n, dtype=np.bool_)
    crossing = 0.0
    theta = 0.0
    if site:
        largest = 0
        n_clusters = 0
        sum_sq = 0.0
    else:
        largest = 1 if n > 0 else 0
        n_clusters = n
        sum_sq = float(n)
        for v in range(n):
            if (bits[v] & cross_mask) == cross_mask:
                crossing = 1.0
        if bits[center] & theta_mask:
            theta = 1.0
    out[0, 0] = crossing
    out[0, 1] = largest
    out[0, 2] = n_clusters
    out[0, 3] = sum_sq
    out[0, 4] = theta
    for k in range(M):
        el = order[k]
        if site:
            v = el
            is_open[v] = True
            n_clusters += 1
            sum_sq += 1.0
            if largest < 1:
                largest = 1
            for q in range(indptr[v], indptr[v + 1]):
                u = indices[q]
                if is_open[u]:
                    ra = _find(parent, v)
                    rb = _find(parent, u)
                    if ra != rb:
                        sa = size[ra]
                        sb = size[rb]
                        sum_sq += 2.0 * sa * sb
                        n_clusters -= 1
                        _union(parent, size, mask, ra, rb)
            r = _find(parent, v)
        else:
            a = edges[el, 0]
            b = edges[el, 1]
            ra = _find(parent, a)
            rb = _find(parent, b)
            if ra != rb:
                sum_sq += 2.0 * size[ra] * size[rb]
                n_clusters -= 1
            r = _union(parent, size, mask, ra, rb)
        if size[r] > largest:
            largest = size[r]
        if (mask[r] & cross_mask) == cross_mask:
            crossing = 1.0
        if theta == 0.0 and ((not site) or is_open[center]):
            if mask[_find(parent, center)] & theta_mask:
                theta = 1.0
        out[k + 1, 0] = crossing
        out[k + 1, 1] = largest
        out[k + 1, 2] = n_clusters
        out[k + 1, 3] = sum_sq
        out[k + 1, 4] = theta
    return out


# --------------------------------------------------------------------------
# labelling and queries
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Result of :func:`label_clusters`.

    ``root[v]`` is the representative of ``v`` (``-1`` for closed sites);
    ``size`` and ``mask`` are meaningful at representatives only.
    """

    root: np.ndarray
    size: np.ndarray
    mask: np.ndarray
    graph: Graph
    mode: str

    @property
    def roots(self) -> np.ndarray:
        r = self.root[self.root >= 0]
        return np.unique(r)

    @property
    def n_clusters(self) -> int:
        return int(self.roots.size)

    def cluster_sizes(self) -> np.ndarray:
        return self.size[self.roots]


def label_clusters(config: Configuration) -> ClusterLabeling:
    """Partition the open structure of ``config`` into connected clusters."""
    g = config.graph
    check_mode(config.mode)
    root, size, mask = _label(g.n_vertices, g.edges, config.open, config.mode == "site", g.boundary_bits)
    return ClusterLabeling(root, size, mask, g, config.mode)


def _set_mask(graph: Graph, *names: str) -> int:
    m = 0
    for name in names:
        m |= graph.boundary_bit(name)
    return m


def crossing_exists(labeling: ClusterLabeling, set_a: str, set_b: str) -> bool:
    """True iff one cluster touches both named boundary sets."""
    both = _set_mask(labeling.graph, set_a, set_b)
    r = labeling.roots
    return bool(np.any((labeling.mask[r] & both) == both))


def count_spanning_clusters(labeling: ClusterLabeling, set_a: str, set_b: str) -> int:
    both = _set_mask(labeling.graph, set_a, set_b)
    r = labeling.roots
    return int(np.count_nonzero((labeling.mask[r] & both) == both))


def cluster_size_histogram(labeling: ClusterLabeling, exclude: str | None = None) -> dict[int, int]:
    """Map cluster size to number of clusters.

    ``exclude`` drops clusters touching the named boundary set (finite-volume
    stand-in for keeping finite clusters only).
    """
    r = labeling.roots
    if exclude is not None:
        bit = labeling.graph.boundary_bit(exclude)
        r = r[(labeling.mask[r] & bit) == 0]
    sizes, counts = np.unique(labeling.size[r], return_counts=True)
    return dict(zip(sizes.tolist(), counts.tolist()))


def cluster_of(labeling: ClusterLabeling, v: int) -> int:
    """|C(v)|, zero for a closed site."""
    r = labeling.root[v]
    return 0 if r < 0 else int(labeling.size[r])


def touches(labeling: ClusterLabeling, v: int, name: str) -> bool:
    r = labeling.root[v]
    return r >= 0 and bool(labeling.mask[r] & labeling.graph.boundary_bit(name))


# --------------------------------------------------------------------------
# single-sweep curves and binomial convolution
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SweepCurve:
    """Observables after each insertion, indexed by occupation number ``m = 0..M``."""

    values: dict
    M: int
    mode: str
    seeds: tuple = ()
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def _event_masks(graph: Graph, sets, theta_set):
    cross = _set_mask(graph, *sets) if sets else 0
    theta = graph.boundary_bit(theta_set) if theta_set and theta_set in graph.boundary_sets else 0
    return cross, theta


def sweep(labels: UniformLabels, observables=SWEEP_OBSERVABLES, sets=("left", "right"),
          theta_set: str = "boundary") -> SweepCurve:
    """Insert elements in increasing label order and record observables at every ``m``.

    Supported observables: ``crossing`` (a cluster touches both ``sets``),
    ``largest``, ``n_clusters``, ``sum_sq`` (sum of squared cluster sizes) and
    ``theta`` (the centre's cluster touches ``theta_set``).
    """
    observables = tuple(observables)
    bad = [o for o in observables if o not in SWEEP_OBSERVABLES]
    if bad:
        raise ValueError(f"observable {bad[0]!r} is not incrementally maintainable; "
                         f"choose from {SWEEP_OBSERVABLES}")
    g = labels.graph
    cross, theta = _event_masks(g, sets if "crossing" in observables else (), theta_set)
    order = insertion_order(labels.values)
    table = _sweep(g.n_vertices, labels.mode == "site", g.edges, g.indptr, g.indices, order,
                   g.boundary_bits, cross, g.center, theta)
    values = {o: table[:, SWEEP_OBSERVABLES.index(o)] for o in observables}
    return SweepCurve(values, labels.size, labels.mode, (labels.seed,), {"sets": tuple(sets)})


def binomial_window(M: int, p: float) -> tuple[int, np.ndarray]:
    """Binomial(M, p) probabilities on a window holding all but ~1e-12 of the mass."""
    if p <= 0.0:
        return 0, np.ones(1)
    if p >= 1.0:
        return M, np.ones(1)
    mu = M * p
    sd = np.sqrt(M * p * (1.0 - p))
    lo = max(0, int(np.floor(mu - 8.0 * sd - 20)))
    hi = min(M, int(np.ceil(mu + 8.0 * sd + 20)))
    m = np.arange(lo, hi + 1)
    return lo, np.exp(stats.binom.logpmf(m, M, p))


def convolve(curve, p: float, name: str | None = None) -> float:
    """``sum_m Binomial(M, p){m} * curve[m]`` -- the fixed-``p`` expectation."""
    if isinstance(curve, SweepCurve):
        if name is None:
            if len(curve.values) != 1:
                raise ValueError("name: pick one observable of a multi-observable curve")
            name = next(iter(curve.values))
        curve = curve.values[name]
    curve = np.asarray(curve, dtype=float)
    M = curve.shape[0] - 1
    lo, w = binomial_window(M, p)
    return float(np.dot(w, curve[lo:lo + w.shape[0]]))


@dataclass(frozen=True, eq=False)
class EventCurve:
    """Average of step-function sweep observables ``1{m >= m*_i}`` over samples.

    Stores the sorted event counts only; the curve value at ``m`` is the
    fraction of samples with ``m*_i <= m``.
    """

    events: np.ndarray
    M: int

    def at(self, m) -> np.ndarray:
        return np.searchsorted(self.events, m, side="right") / self.events.shape[0]

    def curve(self) -> np.ndarray:
        return self.at(np.arange(self.M + 1))

    def value(self, p: float) -> float:
        lo, w = binomial_window(self.M, p)
        return float(np.dot(w, self.at(np.arange(lo, lo + w.shape[0]))))

    def resample(self, idx) -> "EventCurve":
        return EventCurve(np.sort(self.events[idx]), self.M)

    @classmethod
    def from_events(cls, events, M: int) -> "EventCurve":
        return cls(np.sort(np.asarray(events, dtype=np.int64)), int(M))


def first_events(graph: Graph, mode: str, values: np.ndarray, sets=("left", "right"),
                 theta_set: str | None = "boundary") -> tuple[int, int]:
    """Occupation numbers at which the crossing and centre-boundary events first occur."""
    cross, theta = _event_masks(graph, sets, theta_set)
    order = insertion_order(values)
    return _first_events(graph.n_vertices, mode == "site", graph.edges, graph.indptr, graph.indices,
                         order, graph.boundary_bits, cross, graph.center, theta)
