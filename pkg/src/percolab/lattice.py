"""Finite regions of the lattices used throughout the package.

Every graph is stored with dense integer vertex ids, a dense edge table and a
CSR adjacency (``indptr``, ``indices``, ``edge_ids``).  Planar lattices share
one integer-grid indexing scheme: vertex ``(x, y)`` has id ``y * Lx + x``.

* square      -- nearest neighbours on Z^2
* triangular  -- sheared square grid plus the ``(x+1, y) -- (x, y+1)`` diagonal
* hexagonal   -- brick-wall realisation of the honeycomb (the triangular dual)
* bowtie      -- square grid plus one (1, 1) diagonal on every other face of a checkerboard
* hypercubic  -- Z^d box, ``d = 1`` gives a path
* tree        -- rooted k-ary tree, heap numbering
* oriented    -- Z_+^{d+1} with edges pointing towards increasing coordinate sum
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

KINDS = ("square", "hypercubic", "triangular", "hexagonal", "bowtie", "tree", "oriented")
PLANAR = ("square", "triangular", "hexagonal", "bowtie")
BOUNDARIES = ("free", "periodic-x")

# Known coordination numbers of the infinite lattices (bow-tie alternates 4 and 6).
COORDINATION = {"square": 4, "triangular": 6, "hexagonal": 3}

SQRT3_2 = math.sqrt(3.0) / 2.0


class LatticeError(ValueError):
    """Invalid lattice description or unsupported transform."""


@dataclass(frozen=True)
class LatticeSpec:
    """Description of a finite lattice region.

    ``L`` is the number of vertices per axis (``Ly`` overrides the second axis
    for rectangles).  For trees ``L`` is the depth, for oriented lattices the
    largest coordinate sum.
    """

    kind: str
    L: int
    d: int | None = None
    arity: int | None = None
    boundary: str = "free"
    Ly: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LatticeError(f"kind: unknown lattice kind {self.kind!r}")
        if int(self.L) != self.L or self.L < 1:
            raise LatticeError(f"L: must be a positive integer, got {self.L!r}")
        if self.Ly is not None and (int(self.Ly) != self.Ly or self.Ly < 1):
            raise LatticeError(f"Ly: must be a positive integer, got {self.Ly!r}")
        if self.boundary not in BOUNDARIES:
            raise LatticeError(f"boundary: must be one of {BOUNDARIES}")
        if self.kind == "hypercubic":
            if self.d is None or self.d < 1:
                raise LatticeError("d: hypercubic lattices need dimension d >= 1")
        if self.kind == "oriented" and self.d is not None and self.d < 1:
            raise LatticeError("d: oriented lattices need d >= 1")
        if self.kind == "tree":
            if self.arity is None or self.arity < 2:
                raise LatticeError("arity: trees need arity >= 2")
        if self.boundary == "periodic-x":
            if self.kind in ("tree", "oriented"):
                raise LatticeError("boundary: periodic-x is only defined for box lattices")
            if self.L < 3:
                raise LatticeError("L: periodic-x needs at least 3 columns")
            if self.kind in ("hexagonal", "bowtie") and self.L % 2:
                raise LatticeError("L: periodic-x hexagonal/bowtie boxes need an even width")

    @property
    def dim(self) -> int | None:
        if self.kind in PLANAR:
            return 2
        if self.kind == "hypercubic":
            return self.d
        if self.kind == "oriented":
            return (self.d or 1) + 1
        return None

    @property
    def shape(self) -> tuple[int, ...]:
        """Vertices per axis for box lattices."""
        if self.kind in PLANAR:
            return (self.L, self.Ly if self.Ly is not None else self.L)
        if self.kind == "hypercubic":
            dims = [self.L] * self.d
            if self.Ly is not None and self.d >= 2:
                dims[1] = self.Ly
            return tuple(dims)
        raise LatticeError(f"{self.kind} lattices have no box shape")

    def with_L(self, L: int, Ly: int | None = None) -> "LatticeSpec":
        return replace(self, L=L, Ly=Ly)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "LatticeSpec":
        allowed = {"kind", "L", "d", "arity", "boundary", "Ly"}
        extra = set(data) - allowed
        if extra:
            raise LatticeError(f"{sorted(extra)[0]}: unknown lattice field")
        if "kind" not in data or "L" not in data:
            missing = "kind" if "kind" not in data else "L"
            raise LatticeError(f"{missing}: required field missing")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable finite graph with CSR adjacency and named boundary sets."""

    n_vertices: int
    edges: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    edge_ids: np.ndarray
    coords: np.ndarray
    boundary_sets: dict = field(default_factory=dict)
    directed: bool = False
    center: int = 0
    geometry: str = "grid"
    spec: LatticeSpec | None = None

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self, v: int) -> list[tuple[int, int]]:
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.edge_ids[lo:hi].tolist()))

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def boundary(self, name: str) -> np.ndarray:
        try:
            return self.boundary_sets[name]
        except KeyError:
            raise KeyError(f"unknown boundary set {name!r}; have {sorted(self.boundary_sets)}") from None

    @cached_property
    def boundary_names(self) -> tuple[str, ...]:
        return tuple(self.boundary_sets)

    def boundary_bit(self, name: str) -> int:
        self.boundary(name)
        return 1 << self.boundary_names.index(name)

    @cached_property
    def boundary_bits(self) -> np.ndarray:
        """Per-vertex bitmask of boundary-set membership."""
        bits = np.zeros(self.n_vertices, dtype=np.int64)
        for i, name in enumerate(self.boundary_names):
            bits[self.boundary_sets[name]] |= np.int64(1) << i
        bits.setflags(write=False)
        return bits

    def positions(self) -> np.ndarray:
        """Euclidean embedding of the vertices (2D lattices only for shearing)."""
        c = self.coords.astype(float)
        if self.geometry == "triangular":
            return np.column_stack([c[:, 0] + 0.5 * c[:, 1], SQRT3_2 * c[:, 1]])
        return c

    def vertex_at(self, *coord: int) -> int:
        """Vertex id at integer coordinates (box lattices)."""
        if self.spec is None or self.spec.kind not in PLANAR + ("hypercubic",):
            hits = np.flatnonzero((self.coords == np.asarray(coord)).all(axis=1))
            if hits.size == 0:
                raise KeyError(f"no vertex at {coord}")
            return int(hits[0])
        shape = self.spec.shape
        if len(coord) != len(shape) or any(not 0 <= c < s for c, s in zip(coord, shape)):
            raise KeyError(f"no vertex at {coord}")
        return int(np.ravel_multi_index(tuple(reversed(coord)), tuple(reversed(shape))))


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def graph_from_edges(
    n_vertices: int,
    edges: np.ndarray,
    coords: np.ndarray,
    boundary_sets: dict,
    *,
    directed: bool = False,
    center: int = 0,
    geometry: str = "grid",
    spec: LatticeSpec | None = None,
) -> Graph:
    edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
    m = edges.shape[0]
    eid = np.arange(m, dtype=np.int64)
    if directed:
        src, dst, ids = edges[:, 0], edges[:, 1], eid
    else:
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        ids = np.concatenate([eid, eid])
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_vertices), out=indptr[1:])
    indices = np.ascontiguousarray(dst[order])
    edge_ids = np.ascontiguousarray(ids[order])
    sets = {k: np.ascontiguousarray(np.unique(v), dtype=np.int64) for k, v in boundary_sets.items()}
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    _freeze(edges, indptr, indices, edge_ids, coords, *sets.values())
    return Graph(n_vertices, edges, indptr, indices, edge_ids, coords, sets, directed, int(center), geometry, spec)


# forward neighbour offsets; condition(x, y) selects the source vertices that own the edge
def _planar_offsets(kind):
    always = lambda x, y: np.ones(x.shape, dtype=bool)  # noqa: E731
    if kind == "square":
        return [((1, 0), always), ((0, 1), always)]
    if kind == "triangular":
        return [((1, 0), always), ((0, 1), always), ((-1, 1), always)]
    if kind == "hexagonal":
        return [((1, 0), always), ((0, 1), lambda x, y: (x + y) % 2 == 0)]
    if kind == "bowtie":
        # one diagonal on every other face of a checkerboard colouring
        even = lambda x, y: (x + y) % 2 == 0  # noqa: E731
        return [((1, 0), always), ((0, 1), always), ((1, 1), even)]
    raise LatticeError(kind)


def _grid_edges(Lx, Ly, offsets, periodic_x, vertex_ok=None):
    y, x = np.divmod(np.arange(Lx * Ly, dtype=np.int64), Lx)
    out = []
    for (dx, dy), cond in offsets:
        nx, ny = x + dx, y + dy
        ok = cond(x, y) & (ny >= 0) & (ny < Ly)
        if periodic_x:
            nx = nx % Lx
        else:
            ok &= (nx >= 0) & (nx < Lx)
        if vertex_ok is not None:
            ok &= vertex_ok[y * Lx + x]
            ok &= vertex_ok[np.where(ok, ny * Lx + nx, 0)]
        src = (y * Lx + x)[ok]
        dst = (ny * Lx + nx)[ok]
        out.append(np.column_stack([src, dst]))
    edges = np.concatenate(out)
    # row-major edge order: by source vertex, then by offset
    return edges[np.argsort(edges[:, 0], kind="stable")]


def _build_planar(spec: LatticeSpec) -> Graph:
    Lx, Ly = spec.shape
    periodic = spec.boundary == "periodic-x"
    edges = _grid_edges(Lx, Ly, _planar_offsets(spec.kind), periodic)
    y, x = np.divmod(np.arange(Lx * Ly, dtype=np.int64), Lx)
    sets = {}
    if not periodic:
        sets["left"] = np.flatnonzero(x == 0)
        sets["right"] = np.flatnonzero(x == Lx - 1)
    sets["bottom"] = np.flatnonzero(y == 0)
    sets["top"] = np.flatnonzero(y == Ly - 1)
    outer = (y == 0) | (y == Ly - 1)
    if not periodic:
        outer |= (x == 0) | (x == Lx - 1)
    sets["boundary"] = np.flatnonzero(outer)
    center = (Ly // 2) * Lx + Lx // 2
    geometry = "triangular" if spec.kind == "triangular" else "grid"
    return graph_from_edges(Lx * Ly, edges, np.column_stack([x, y]), sets,
                            center=center, geometry=geometry, spec=spec)


def _build_hypercubic(spec: LatticeSpec) -> Graph:
    shape = spec.shape
    d = len(shape)
    n = int(np.prod(shape))
    # coords[:, 0] varies fastest
    coords = np.stack(np.unravel_index(np.arange(n), tuple(reversed(shape))), axis=1)[:, ::-1]
    strides = np.cumprod((1,) + shape[:-1])
    periodic = spec.boundary == "periodic-x"
    out = []
    ids = np.arange(n, dtype=np.int64)
    for k in range(d):
        if k == 0 and periodic:
            src = ids
            dst = ids + np.where(coords[:, 0] == shape[0] - 1, -(shape[0] - 1), 1)
        else:
            ok = coords[:, k] < shape[k] - 1
            src = ids[ok]
            dst = src + strides[k]
        out.append(np.column_stack([src, dst]))
    edges = np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)
    edges = edges[np.argsort(edges[:, 0], kind="stable")]
    sets = {}
    if not periodic:
        sets["left"] = np.flatnonzero(coords[:, 0] == 0)
        sets["right"] = np.flatnonzero(coords[:, 0] == shape[0] - 1)
    if d >= 2:
        sets["bottom"] = np.flatnonzero(coords[:, 1] == 0)
        sets["top"] = np.flatnonzero(coords[:, 1] == shape[1] - 1)
    first = 1 if periodic else 0
    outer = np.zeros(n, dtype=bool)
    for k in range(first, d):
        outer |= (coords[:, k] == 0) | (coords[:, k] == shape[k] - 1)
    sets["boundary"] = np.flatnonzero(outer)
    center = int(np.dot([s // 2 for s in shape], strides))
    return graph_from_edges(n, edges, coords, sets, center=center, spec=spec)


def _build_tree(spec: LatticeSpec) -> Graph:
    k, depth = spec.arity, spec.L
    n = (k ** (depth + 1) - 1) // (k - 1)
    child = np.arange(1, n, dtype=np.int64)
    edges = np.column_stack([(child - 1) // k, child])
    first_leaf = (k ** depth - 1) // (k - 1)
    level = np.zeros(n, dtype=np.int64)
    start = 1
    for lv in range(1, depth + 1):
        width = k ** lv
        level[start:start + width] = lv
        start += width
    leaves = np.arange(first_leaf, n)
    sets = {"root": np.array([0]), "leaves": leaves, "boundary": leaves}
    return graph_from_edges(n, edges, level[:, None], sets, center=0, geometry="tree", spec=spec)


def _build_oriented(spec: LatticeSpec) -> Graph:
    d = spec.d or 1
    L = spec.L
    axes = d + 1
    grid = np.stack(np.unravel_index(np.arange((L + 1) ** axes), (L + 1,) * axes), axis=1)[:, ::-1]
    coords = grid[grid.sum(axis=1) <= L]
    # lexicographic order with the first coordinate fastest
    coords = coords[np.lexsort(coords.T)]
    n = coords.shape[0]
    weights = (L + 1) ** np.arange(axes)
    lookup = np.full((L + 1) ** axes, -1, dtype=np.int64)
    lookup[coords @ weights] = np.arange(n)
    out = []
    ids = np.arange(n, dtype=np.int64)
    sums = coords.sum(axis=1)
    for k in range(axes):
        ok = sums < L
        dst = lookup[(coords[ok] @ weights) + weights[k]]
        out.append(np.column_stack([ids[ok], dst]))
    edges = np.concatenate(out)
    edges = edges[np.argsort(edges[:, 0], kind="stable")]
    level = np.flatnonzero(sums == L)
    sets = {"origin": np.array([0]), "level": level, "boundary": level}
    return graph_from_edges(n, edges, coords, sets, directed=True, center=0, spec=spec)


def build_lattice(spec: LatticeSpec) -> Graph:
    """Build the finite graph described by ``spec``.

    Boxes carry ``left``/``right`` (first axis), ``bottom``/``top`` (second
    axis) and ``boundary`` (all outer vertices); ``center`` is the vertex at
    ``(Lx // 2, Ly // 2, ...)``.  Trees carry ``root``/``leaves``, oriented
    lattices ``origin``/``level``.
    """
    if spec.kind in PLANAR:
        return _build_planar(spec)
    if spec.kind == "hypercubic":
        return _build_hypercubic(spec)
    if spec.kind == "tree":
        return _build_tree(spec)
    return _build_oriented(spec)


_DUAL = {"square": "square", "triangular": "hexagonal", "hexagonal": "triangular"}
_STAR = {"triangular": "triangular"}


def dual_or_star(spec: LatticeSpec, which: str) -> LatticeSpec:
    """Matching-pair partner of a planar lattice.

    Only the pairs with a known threshold relation are supported: the square
    lattice is self-dual, triangular and hexagonal are mutual duals, and the
    triangular lattice is its own star graph.
    """
    if which not in ("dual", "star"):
        raise LatticeError(f"which: expected 'dual' or 'star', got {which!r}")
    table = _DUAL if which == "dual" else _STAR
    if spec.kind not in table:
        raise LatticeError(f"{which} of a {spec.kind} lattice is not supported")
    return replace(spec, kind=table[spec.kind])


def build_triangle_domain(x: float, delta: float) -> Graph:
    """Unit equilateral triangle intersected with the triangular lattice of mesh ``delta``.

    Corners are ``a = (0, 0)``, ``b = (1, 0)`` and ``c`` at the apex; lattice
    vertex ``(i, j)`` sits at ``delta * (i + j/2, j*sqrt(3)/2)`` with
    ``i, j >= 0`` and ``i + j <= N = 1/delta``.  Boundary sets: ``ab``, ``bc``,
    ``ca`` and ``cd``, the part of ``ca`` within distance ``x`` of ``c``.
    """
    if not 0.0 < x < 1.0:
        raise LatticeError(f"x: must lie in (0, 1), got {x!r}")
    if not delta > 0:
        raise LatticeError(f"delta: must be positive, got {delta!r}")
    N = int(round(1.0 / delta))
    if N < 2:
        raise LatticeError("delta: mesh too coarse, the triangle has no interior arcs")
    # vertices on (ca) at distance <= x from c: (N - j) / N <= x
    j_d = int(math.ceil(N * (1.0 - x) - 1e-9))
    if j_d < 1:
        raise LatticeError("x: arc cd reaches corner a at this mesh (arcs ab and cd would meet)")
    side = N + 1
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="xy")
    inside = (ii + jj) <= N
    # dense numbering of the vertices inside the triangle, row-major in j
    full_ids = np.full(side * side, -1, dtype=np.int64)
    flat_inside = inside.ravel()
    full_ids[flat_inside] = np.arange(flat_inside.sum())
    all_edges = _grid_edges(side, side, _planar_offsets("triangular"), False, vertex_ok=flat_inside)
    edges = full_ids[all_edges]
    i = ii.ravel()[flat_inside]
    j = jj.ravel()[flat_inside]
    sets = {
        "ab": np.flatnonzero(j == 0),
        "bc": np.flatnonzero(i + j == N),
        "ca": np.flatnonzero(i == 0),
        "cd": np.flatnonzero((i == 0) & (j >= j_d)),
    }
    coords = np.column_stack([i, j])
    return graph_from_edges(len(i), edges, coords, sets, center=0, geometry="triangular")


def triangle_positions(graph: Graph, delta: float) -> np.ndarray:
    return graph.positions() * delta
