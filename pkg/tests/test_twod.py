from collections import deque
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab import twod
from percolab.lattice import LatticeSpec, build_lattice

REGION = twod.ExplorationRegion(40, 40)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_selfdual_exact_half(n):
    assert twod.selfdual_crossing_exact(n) == Fraction(1, 2)


def test_selfdual_monte_carlo():
    e = twod.selfdual_crossing_test(8, 4000, seed=3)
    assert abs(e.z(0.5)) <= 3


def test_crossing_polynomial_size_limit():
    with pytest.raises(ValueError):
        twod.crossing_polynomial(build_lattice(LatticeSpec("square", 6)))


def test_cardy_monotone_in_x_under_coupling():
    res = twod.cardy_crossing([0.1, 0.3, 0.5, 0.7, 0.9], [1 / 16], 400, seed=2)
    f = [r.f for r in res]
    assert f == sorted(f)
    assert 0 < f[0] and f[-1] < 1


def test_cardy_symmetric_point():
    (r,) = twod.cardy_crossing([0.5], [1 / 24], 3000, seed=4)
    assert abs(r.f_estimate.z(0.5)) <= 3


def test_cardy_trend_needs_two_meshes():
    res = twod.cardy_crossing([0.5], [1 / 16], 100, seed=1)
    with pytest.raises(twod.EstimationError, match="two meshes"):
        twod.cardy_trend(res, 0.5)


def test_rsw_square_box_near_half():
    r = twod.rsw_box(1, 1, [8, 16], 2000, seed=5, kind="triangular", mode="site")
    for e in r.estimates:
        assert 0.4 < e.value < 0.6
    assert r.ratio < 1.5


def test_rsw_long_boxes_bounded_away_from_zero():
    wide = twod.rsw_box(3, 1, [8, 16], 2000, seed=6, kind="triangular", mode="site")
    tall = twod.rsw_box(1, 3, [8, 16], 2000, seed=6, kind="triangular", mode="site")
    assert wide.minimum > 0.01
    assert tall.minimum > wide.maximum


def test_annulus_circuit_positive():
    r = twod.rsw_annulus([4, 8], 2000, seed=7, modulus=1.0)
    assert r.minimum > 0


def _region_open(region, labels, x, y):
    if y < 0:
        return x < 0
    return labels[region.site_index(x, y)] <= 0.5


def _connected(region, labels, sites, want_open):
    """BFS over triangular neighbours through sites of the wanted state, row -1 included."""
    sites = {tuple(s) for s in sites.tolist()}
    start = next(iter(sites))
    seen, queue = {start}, deque([start])
    half = region.width / 2
    while queue:
        x, y = queue.popleft()
        for dx, dy in twod.DIRS.tolist():
            nx, ny = x + dx, y + dy
            if (nx, ny) in seen or ny < -1 or ny >= region.height or abs(nx + 0.5 * ny) >= half + 2:
                continue
            if _region_open(region, labels, nx, ny) == want_open:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return sites <= seen


@given(seed=st.integers(0, 2 ** 31))
def test_exploration_path_invariants(seed):
    path = twod.extract_exploration_path(REGION, seed=seed)
    labels = twod.label_stream(seed, 0, REGION.n_sites)
    assert all(_region_open(REGION, labels, x, y) for x, y in path.left.tolist())
    assert not any(_region_open(REGION, labels, x, y) for x, y in path.right.tolist())
    steps = path.right - path.left
    assert {tuple(s) for s in steps.tolist()} <= {tuple(d) for d in twod.DIRS.tolist()}
    pts = np.round(path.points, 9)
    assert np.unique(pts, axis=0).shape[0] == pts.shape[0]
    assert path.n_steps > 0


def test_exploration_path_separates_two_clusters():
    for seed in range(5):
        path = twod.extract_exploration_path(REGION, seed=seed)
        labels = twod.label_stream(seed, 0, REGION.n_sites)
        assert _connected(REGION, labels, path.left, True)
        assert _connected(REGION, labels, path.right, False)


@pytest.mark.parametrize("value", [0.0, 1.0])
def test_exploration_all_open_or_closed(value):
    labels = np.full(REGION.n_sites, value)
    path = twod.extract_exploration_path(REGION, labels=labels)
    ys = path.left[:, 1] if value == 0.0 else path.right[:, 1]
    if value == 0.0:
        # open everywhere: the interface runs along the closed boundary half-line
        assert np.all(path.right[:, 1] == -1)
    else:
        assert np.all(path.left[:, 1] == -1)
    assert ys.size == path.n_steps + 1


def test_exploration_path_csv(tmp_path):
    path = twod.extract_exploration_path(REGION, seed=1)
    f = tmp_path / "path.csv"
    path.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "step,x,y"
    assert len(lines) == path.points.shape[0] + 1


def test_region_validation():
    with pytest.raises(ValueError, match="width"):
        twod.ExplorationRegion(2, 10)
    with pytest.raises(ValueError, match="labels"):
        twod.extract_exploration_path(REGION, labels=np.zeros(3))


def test_box_counting_controls():
    scales = twod.dyadic_scales(512)
    assert twod.box_counting_dimension([twod.line_control(512)], scales).value == pytest.approx(1.0, abs=1e-9)
    assert twod.box_counting_dimension([twod.block_control(512)], scales).value == pytest.approx(2.0, abs=1e-9)


def test_box_counting_needs_scales():
    with pytest.raises(twod.EstimationError, match="scales"):
        twod.box_counting_dimension([twod.line_control(64)], [2, 4])


def test_exploration_dimension_between_one_and_two():
    paths = twod.exploration_paths(128, 4, seed=3)
    d = twod.box_counting_dimension(paths)
    assert 1.2 < d.value < 1.9
