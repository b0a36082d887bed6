import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab.lattice import (KINDS, LatticeError, LatticeSpec, build_lattice, build_triangle_domain,
                              dual_or_star)


def edge_set(g):
    return {tuple(sorted(e)) for e in g.edges.tolist()}


@pytest.mark.parametrize("kind,L,V,E", [
    ("square", 6, 36, 2 * 6 * 5),
    ("triangular", 6, 36, 2 * 6 * 5 + 25),
    ("bowtie", 6, 36, 2 * 6 * 5 + 13),
])
def test_planar_counts(kind, L, V, E):
    g = build_lattice(LatticeSpec(kind, L))
    assert g.n_vertices == V
    assert g.edge_count == E


@pytest.mark.parametrize("kind,bulk", [("square", 4), ("triangular", 6), ("hexagonal", 3)])
def test_bulk_degree(kind, bulk):
    g = build_lattice(LatticeSpec(kind, 12))
    inner = [g.vertex_at(x, y) for x in range(2, 10) for y in range(2, 10)]
    assert set(g.degree()[inner].tolist()) == {bulk}


def test_bowtie_alternating_degree():
    g = build_lattice(LatticeSpec("bowtie", 12))
    for x in range(2, 10):
        for y in range(2, 10):
            assert g.degree()[g.vertex_at(x, y)] == (6 if (x + y) % 2 == 0 else 4)


def test_hypercubic_counts():
    g = build_lattice(LatticeSpec("hypercubic", 5, d=3))
    assert g.n_vertices == 125
    assert g.edge_count == 3 * 25 * 4
    g1 = build_lattice(LatticeSpec("hypercubic", 10, d=1))
    assert g1.edge_count == 9
    assert sorted(g1.boundary("boundary").tolist()) == [0, 9]


def test_tree_structure():
    g = build_lattice(LatticeSpec("tree", 4, arity=3))
    assert g.n_vertices == sum(3 ** k for k in range(5))
    assert g.edge_count == g.n_vertices - 1
    assert g.boundary("leaves").size == 3 ** 4
    assert g.center == 0


def test_oriented_structure():
    g = build_lattice(LatticeSpec("oriented", 3, d=1))
    assert g.directed
    assert np.all(g.edges[:, 0] < g.edges[:, 1])
    src, dst = g.coords[g.edges[:, 0]], g.coords[g.edges[:, 1]]
    assert np.all(dst.sum(axis=1) == src.sum(axis=1) + 1)
    assert np.all(g.coords[g.boundary("level")].sum(axis=1) == 3)


def test_periodic_x_wraps():
    free = build_lattice(LatticeSpec("square", 6))
    per = build_lattice(LatticeSpec("square", 6, boundary="periodic-x"))
    assert per.edge_count == free.edge_count + 6
    assert "left" not in per.boundary_names


def test_boundary_sets_square():
    g = build_lattice(LatticeSpec("square", 5))
    assert np.all(g.coords[g.boundary("left"), 0] == 0)
    assert np.all(g.coords[g.boundary("top"), 1] == 4)
    assert g.boundary("boundary").size == 16


def test_rectangle():
    g = build_lattice(LatticeSpec("square", 7, Ly=3))
    assert g.n_vertices == 21
    assert g.boundary("left").size == 3


def test_duals():
    assert dual_or_star(LatticeSpec("square", 8), "dual").kind == "square"
    assert dual_or_star(LatticeSpec("triangular", 8), "dual").kind == "hexagonal"
    assert dual_or_star(LatticeSpec("hexagonal", 8), "dual").kind == "triangular"
    assert dual_or_star(LatticeSpec("triangular", 8), "star").kind == "triangular"
    with pytest.raises(LatticeError):
        dual_or_star(LatticeSpec("square", 8), "star")


@pytest.mark.parametrize("bad", [
    dict(kind="cubic", L=4), dict(kind="square", L=0), dict(kind="hypercubic", L=4),
    dict(kind="tree", L=3), dict(kind="tree", L=3, arity=1), dict(kind="square", L=4, boundary="torus"),
])
def test_invalid_specs(bad):
    with pytest.raises(LatticeError):
        LatticeSpec(**bad)


def test_spec_json_roundtrip():
    s = LatticeSpec("tree", 5, arity=2)
    assert LatticeSpec.from_dict(json.loads(s.to_json())) == s


def test_triangle_domain_arcs():
    g = build_triangle_domain(0.5, 1 / 8)
    for name in ("ab", "bc", "ca", "cd"):
        assert g.boundary(name).size > 0
    assert set(g.boundary("cd").tolist()) <= set(g.boundary("ca").tolist())
    with pytest.raises(ValueError):
        build_triangle_domain(1.5, 1 / 8)


@given(kind=st.sampled_from(["square", "triangular", "hexagonal", "bowtie"]), L=st.integers(2, 12))
def test_planar_graph_invariants(kind, L):
    g = build_lattice(LatticeSpec(kind, L))
    e = g.edges
    assert np.all(e[:, 0] != e[:, 1])
    assert len(edge_set(g)) == g.edge_count
    assert g.degree().sum() == 2 * g.edge_count
    for v in (0, g.n_vertices - 1, g.center):
        for u, eid in g.adjacency(v):
            assert v in e[eid]
            assert u in e[eid]


@given(L=st.integers(2, 10), x=st.integers(0, 9), y=st.integers(0, 9))
def test_vertex_at_roundtrip(L, x, y):
    g = build_lattice(LatticeSpec("square", L))
    if x < L and y < L:
        v = g.vertex_at(x, y)
        assert g.coords[v].tolist() == [x, y]
    else:
        with pytest.raises(KeyError):
            g.vertex_at(x, y)


def test_kinds_all_build():
    extra = {"hypercubic": dict(d=2), "tree": dict(arity=2), "oriented": dict(d=1)}
    for k in KINDS:
        assert build_lattice(LatticeSpec(k, 4, **extra.get(k, {}))).n_vertices > 0
