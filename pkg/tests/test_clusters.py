import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles import bond_crossing_polynomial, flood_fill, partition_from_roots, polynomial_value
from percolab.clusters import (EventCurve, cluster_of, cluster_size_histogram, convolve, count_spanning_clusters,
                               crossing_exists, first_events, label_clusters, sweep, touches)
from percolab.lattice import LatticeSpec, build_lattice
from percolab.sampling import assign_labels, configuration_from_open, label_stream, threshold
from percolab.twod import crossing_polynomial, crossing_probability, evaluate_polynomial


def labeling(kind, L, mode, p, seed, sample=0):
    g = build_lattice(LatticeSpec(kind, L))
    return label_clusters(threshold(assign_labels(g, mode, seed, sample), p))


@pytest.mark.parametrize("kind", ["square", "triangular", "hexagonal", "bowtie"])
@pytest.mark.parametrize("mode", ["site", "bond"])
def test_union_find_matches_flood_fill(kind, mode):
    g = build_lattice(LatticeSpec(kind, 6))
    rng = np.random.default_rng(11)
    for s in range(200):
        p = float(rng.uniform(0.2, 0.8))
        conf = threshold(assign_labels(g, mode, 123, s), p)
        lab = label_clusters(conf)
        assert partition_from_roots(lab.root) == flood_fill(g.n_vertices, g.edges.tolist(), conf.open.tolist(),
                                                            mode == "site")


def test_sizes_and_masks_consistent():
    lab = labeling("square", 20, "bond", 0.5, 3)
    for r in lab.roots:
        members = np.flatnonzero(lab.root == r)
        assert lab.size[r] == members.size
        expect = np.bitwise_or.reduce(lab.graph.boundary_bits[members])
        assert lab.mask[r] == expect
    hist = cluster_size_histogram(lab)
    assert sum(k * c for k, c in hist.items()) == lab.graph.n_vertices


def test_histogram_exclude_boundary():
    lab = labeling("square", 30, "bond", 0.6, 4)
    full = cluster_size_histogram(lab)
    inner = cluster_size_histogram(lab, exclude="boundary")
    assert sum(inner.values()) < sum(full.values())
    assert all(inner.get(k, 0) <= full[k] for k in inner)


def test_cluster_of_closed_site_is_zero():
    g = build_lattice(LatticeSpec("square", 4))
    conf = configuration_from_open(g, "site", np.zeros(16, bool))
    lab = label_clusters(conf)
    assert cluster_of(lab, 5) == 0
    assert not touches(lab, 0, "left")
    assert lab.n_clusters == 0


def test_all_open_crossings():
    g = build_lattice(LatticeSpec("triangular", 7))
    lab = label_clusters(configuration_from_open(g, "bond", np.ones(g.edge_count, bool)))
    assert crossing_exists(lab, "left", "right")
    assert count_spanning_clusters(lab, "left", "right") == 1
    assert cluster_of(lab, 0) == g.n_vertices


def test_bond_isolated_vertices_are_clusters():
    g = build_lattice(LatticeSpec("square", 5))
    lab = label_clusters(configuration_from_open(g, "bond", np.zeros(g.edge_count, bool)))
    assert lab.n_clusters == 25
    assert cluster_size_histogram(lab) == {1: 25}


def test_exhaustive_enumeration_3x3_against_own_polynomial():
    g = build_lattice(LatticeSpec("square", 3))
    left, right = set(g.boundary("left").tolist()), set(g.boundary("right").tolist())
    oracle = bond_crossing_polynomial(g.n_vertices, g.edges.tolist(), left, right)
    assert sum(oracle) > 0 and len(oracle) == 13
    assert list(crossing_polynomial(g)) == oracle


@pytest.mark.parametrize("p", [0.3, 0.5, 0.7])
def test_monte_carlo_vs_enumeration_3x3(p):
    g = build_lattice(LatticeSpec("square", 3))
    left, right = set(g.boundary("left").tolist()), set(g.boundary("right").tolist())
    exact = polynomial_value(bond_crossing_polynomial(g.n_vertices, g.edges.tolist(), left, right), p)
    e = crossing_probability(g, "bond", p, 100_000, seed=17)
    assert abs(e.value - exact) <= 3 * e.stderr


def test_evaluate_polynomial_self_dual_point():
    from fractions import Fraction
    g = build_lattice(LatticeSpec("square", 3, Ly=2))
    assert evaluate_polynomial(crossing_polynomial(g), Fraction(1, 2)) == Fraction(1, 2)


def test_sweep_matches_threshold_labeling():
    g = build_lattice(LatticeSpec("square", 10))
    lab = assign_labels(g, "bond", 5)
    curve = sweep(lab)
    order = np.argsort(lab.values, kind="stable")
    for m in (0, 30, 90, 150, g.edge_count):
        open_ = np.zeros(g.edge_count, bool)
        open_[order[:m]] = True
        lb = label_clusters(configuration_from_open(g, "bond", open_))
        assert curve["crossing"][m] == crossing_exists(lb, "left", "right")
        assert curve["largest"][m] == lb.cluster_sizes().max()
        assert curve["n_clusters"][m] == lb.n_clusters
        assert curve["sum_sq"][m] == np.sum(lb.cluster_sizes().astype(np.int64) ** 2)
        assert curve["theta"][m] == touches(lb, g.center, "boundary")


def test_sweep_rejects_non_incremental_observable():
    g = build_lattice(LatticeSpec("square", 4))
    with pytest.raises(ValueError, match="incrementally"):
        sweep(assign_labels(g, "bond", 1), observables=("spanning_count",))


def test_sweep_convolution_vs_direct_sampling():
    g = build_lattice(LatticeSpec("square", 12))
    M = g.edge_count
    n = 3000
    events = np.array([first_events(g, "bond", label_stream(21, s, M))[0] for s in range(n)])
    curve = EventCurve.from_events(events, M)
    for p in np.linspace(0.3, 0.7, 11):
        direct = np.mean([crossing_exists(label_clusters(threshold(assign_labels(g, "bond", 99, s), p)),
                                          "left", "right") for s in range(n)])
        conv = curve.value(p)
        se = np.sqrt(max(conv * (1 - conv), 1e-4) * 2 / n)
        assert abs(direct - conv) <= 3 * se + 1e-12, (p, direct, conv)


def test_convolve_binomial_identity():
    M = 200
    curve = np.arange(M + 1) / M
    for p in (0.0, 0.2, 0.5, 1.0):
        assert convolve(curve, p) == pytest.approx(p, abs=1e-10)


def test_convolve_step_is_binomial_tail():
    M, k = 100, 40
    curve = (np.arange(M + 1) >= k).astype(float)
    assert convolve(curve, 0.37) == pytest.approx(stats.binom.sf(k - 1, M, 0.37), abs=1e-10)


@given(seed=st.integers(0, 2 ** 31), p=st.floats(0.05, 0.95), dp=st.floats(0, 0.3))
def test_monotone_coupling_of_clusters(seed, p, dp):
    g = build_lattice(LatticeSpec("square", 8))
    lab = assign_labels(g, "bond", seed)
    a = label_clusters(threshold(lab, p))
    b = label_clusters(threshold(lab, min(1.0, p + dp)))
    # every open cluster at p sits inside one cluster at p + dp
    for r in a.roots:
        members = np.flatnonzero(a.root == r)
        assert np.unique(b.root[members]).size == 1
    assert a.n_clusters >= b.n_clusters
    assert crossing_exists(a, "left", "right") <= crossing_exists(b, "left", "right")


@given(seed=st.integers(0, 2 ** 31), mode=st.sampled_from(["site", "bond"]), p=st.floats(0, 1))
def test_union_find_invariants(seed, mode, p):
    g = build_lattice(LatticeSpec("triangular", 6))
    lab = label_clusters(threshold(assign_labels(g, mode, seed), p))
    roots = lab.roots
    assert np.all(lab.root[roots] == roots)
    assert lab.size[roots].sum() == np.count_nonzero(lab.root >= 0)
    if mode == "bond":
        assert np.all(lab.root >= 0)
