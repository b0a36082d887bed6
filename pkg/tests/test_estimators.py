import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from percolab import estimators as est, parallel
from percolab.lattice import LatticeSpec

LINE = LatticeSpec("hypercubic", 401, d=1)


def gw_fixed_point(k, p):
    """Survival probability of a Galton-Watson tree with Binomial(k, p) offspring."""
    f = lambda t: 1 - (1 - p * t) ** k - t  # noqa: E731
    return optimize.brentq(f, 1e-9, 1.0)


def test_bowtie_root_matches_numpy_roots():
    roots = np.roots([1, 0, -6, 6, 1, -1])
    real = [r.real for r in roots if abs(r.imag) < 1e-12 and 0 < r.real < 1]
    assert len(real) == 1
    assert est.bowtie_root() == pytest.approx(real[0], abs=1e-12)


def test_reference_thresholds():
    assert est.reference_pc(LatticeSpec("square", 8), "bond") == 0.5
    tri = est.reference_pc(LatticeSpec("triangular", 8), "bond")
    assert tri == pytest.approx(2 * math.sin(math.pi / 18), abs=1e-15)
    assert est.reference_pc(LatticeSpec("hexagonal", 8), "bond") == pytest.approx(1 - tri)
    assert est.reference_pc(LatticeSpec("tree", 3, arity=3), "bond") == pytest.approx(1 / 3)


def test_one_dimensional_chi():
    for p in (0.3, 0.6):
        e = est.estimate_chi(LINE, p, n_samples=4000, seed=1)
        assert e.value == pytest.approx((1 + p) / (1 - p), rel=0.05)


def test_one_dimensional_xi():
    p = 0.5
    fit = est.fit_correlation_length(LINE, p, n_samples=2000, seed=2)
    assert fit.xi == pytest.approx(-1 / math.log(p), rel=0.05)
    assert fit.estimate.stderr > 0


def test_tree_chi():
    k, p = 2, 0.3
    e = est.estimate_chi(LatticeSpec("tree", 14, arity=k), p, n_samples=4000, seed=3)
    assert abs(e.z(1 / (1 - k * p))) <= 3


def test_tree_theta_fixed_point():
    k, p = 2, 0.75
    e = est.tree_theta(k, 200, p, 4000, seed=4)
    assert abs(e.z(gw_fixed_point(k, p))) <= 3


def test_tree_beta():
    e = est.estimate_beta_tree(2, [0.52, 0.54, 0.56, 0.58, 0.6], depth=200, n_samples=3000, seed=5)
    assert abs(e.value - 1.0) <= 0.2


def test_theta_proxy_extremes():
    spec = LatticeSpec("square", 9)
    assert est.estimate_theta_proxy(spec, 0.0, n_samples=10, seed=1).value == 0.0
    assert est.estimate_theta_proxy(spec, 1.0, n_samples=10, seed=1).value == 1.0


def test_box_too_small():
    with pytest.raises(ValueError, match="L"):
        est.estimate_theta_proxy(LatticeSpec("square", 9), 0.5, L=2, n_samples=10, seed=1)


@given(seed=st.integers(0, 2 ** 31), p=st.floats(0, 1), q=st.floats(0, 1))
def test_theta_and_chi_monotone_under_coupling(seed, p, q):
    lo, hi = sorted((p, q))
    spec = LatticeSpec("square", 9)
    assert (est.estimate_theta_proxy(spec, lo, n_samples=20, seed=seed).value
            <= est.estimate_theta_proxy(spec, hi, n_samples=20, seed=seed).value)
    assert (est.estimate_chi(spec, lo, n_samples=20, seed=seed).value
            <= est.estimate_chi(spec, hi, n_samples=20, seed=seed).value)


def test_results_independent_of_worker_count():
    spec = LatticeSpec("square", 16)
    parallel.set_workers(1)
    a = est.estimate_chi(spec, 0.45, n_samples=600, seed=8)
    parallel.set_workers(2)
    try:
        b = est.estimate_chi(spec, 0.45, n_samples=600, seed=8)
    finally:
        parallel.set_workers(1)
    assert a == b


def test_estimate_pc_small_square():
    r = est.estimate_pc(LatticeSpec("square", 8), [16, 32, 64], n_samples=400, seed=6, n_boot=40)
    assert abs(r.value - 0.5) < 0.03
    assert r.estimate.stderr > 0
    assert len(r.table()) == 3


def test_duality_square_small():
    r = est.check_duality(LatticeSpec("square", 8), [16, 32], n_samples=400, seed=7)
    assert abs(r.residual.value) < 0.05


def test_solve_half_on_known_curve():
    M = 1000
    curve = est.EventCurve.from_events(np.full(50, 400), M)
    assert est.solve_half(curve) == pytest.approx(0.4, abs=0.002)


def test_fit_finite_size_shift_recovers_synthetic():
    L = np.array([16, 32, 64, 128, 256])
    pL = 0.3 + 0.7 * L ** (-1 / 1.5)
    _, pc, a, nu = est.fit_finite_size_shift(L, pL)
    assert pc == pytest.approx(0.3, abs=1e-3)
    assert nu == pytest.approx(1.5, abs=0.02)


@pytest.mark.parametrize("mode,truth", [
    ("subcritical_exponential", 0.2), ("critical_power", -2.05), ("supercritical_stretched", 0.5)])
def test_fit_tail_recovers_synthetic_laws(mode, truth):
    n = np.arange(1, 2000, dtype=float)
    if mode == "subcritical_exponential":
        y = 3.0 * n ** -1.5 * np.exp(-truth * n)
        n, y = n[:100], y[:100]
    elif mode == "critical_power":
        y = 0.7 * n ** truth
    else:
        y = np.exp(1.0 - 0.8 * n ** truth)
    fit = est.fit_tail(n, y, mode)
    assert fit.value == pytest.approx(truth, abs=2e-3)


def test_fit_tail_needs_a_decade():
    with pytest.raises(est.EstimationError, match="decade"):
        est.fit_tail([10, 11, 12, 13, 14], [1, 1, 1, 1, 1], "critical_power")
    with pytest.raises(ValueError, match="mode"):
        est.fit_tail([1, 10, 100, 1000], [1, 1, 1, 1], "gaussian")


def test_one_dimensional_tail_rate():
    p = 0.5
    b = est.cluster_histogram_batches(LatticeSpec("hypercubic", 20000, d=1), p, 128, 9, exclude="boundary")
    t = est.estimate_tail(b, "subcritical_exponential", seed=9)
    assert t.estimate.value == pytest.approx(-math.log(p), rel=0.1)


def test_survival_and_size_distribution():
    hist = {1: 100, 2: 50, 3: 25}
    n, P = est.size_distribution(hist, 275)
    assert P.sum() == pytest.approx(1.0)
    n, S = est.survival_from_histogram(hist, min_count=1)
    assert S[0] == pytest.approx(1.0)
    assert np.all(np.diff(S) < 0)


def test_log_binned_preserves_mass():
    n = np.arange(1, 1001, dtype=float)
    P = n ** -2.0
    c, d = est.log_binned(n, P)
    assert np.all(np.diff(c) > 0)
    assert len(c) == len(d)


def test_correlation_length_rejects_supercritical_p():
    with pytest.raises(ValueError, match="p"):
        est.fit_correlation_length(LatticeSpec("square", 32), 0.6)


def test_correlation_length_isotropy_square():
    fit = est.fit_correlation_length(LatticeSpec("square", 64), 0.35, [(1, 0), (0, 1)], n_samples=60, seed=10)
    assert fit.phi[(0, 1)] == pytest.approx(1.0, abs=0.1)


def test_nu_beta_needs_three_sizes():
    s = [est.sweep_samples(LatticeSpec("triangular", L), "site", 20, 1) for L in (8, 16)]
    with pytest.raises(ValueError, match="samples"):
        est.estimate_nu_beta(s, 0.5)


def test_scaling_relations_exact():
    for e in (est.TWO_D_EXPONENTS, est.MEAN_FIELD_EXPONENTS):
        res = est.check_scaling_relations(e)
        assert len(res) == 6
        assert all(r == 0 for r in res.values())
        assert all(isinstance(r, Fraction) for r in res.values())


def test_scaling_relations_detect_perturbation():
    e = est.TWO_D_EXPONENTS.replace(beta=est.TWO_D_EXPONENTS.beta + Fraction(1, 10))
    res = est.check_scaling_relations(e)
    assert res["2-alpha = gamma+2beta"] == Fraction(-1, 5)
    assert res["gamma = nu(2-eta)"] == 0


def test_estimate_record_schema():
    e = est.mean_estimate([1.0, 2.0, 3.0], seed=4, method="m", name="x")
    assert e.to_record() == {"name": "x", "value": 2.0, "stderr": pytest.approx(1 / math.sqrt(3)), "n": 3,
                             "seed": 4, "method": "m"}


def test_gap_ratio():
    # per-vertex weighting: sum c n^3 / sum c n^2
    assert est.gap_ratio({1: 10, 2: 5, 4: 1}) == pytest.approx(114 / 46)


def test_clusters_per_vertex_extremes():
    kappa, third = est.clusters_per_vertex(LatticeSpec("square", 16), [0.0, 0.25, 0.5, 0.75, 1.0], 5, 1)
    assert kappa[0] == pytest.approx(1.0)
    assert kappa[-1] == pytest.approx(1 / 256)
    assert np.all(np.diff(kappa) < 0)
    assert third.shape == kappa.shape
