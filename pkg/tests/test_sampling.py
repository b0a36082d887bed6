import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab.lattice import LatticeSpec, build_lattice
from percolab.sampling import (assign_labels, check_seed, configuration_from_open, derive_seed, label_stream,
                               read_configuration_csv, threshold, write_configuration_csv)

G = build_lattice(LatticeSpec("square", 8))


def test_labels_shape_and_range():
    lab = assign_labels(G, "bond", 7)
    assert lab.size == G.edge_count
    assert np.all((lab.values >= 0) & (lab.values < 1))
    assert assign_labels(G, "site", 7).size == G.n_vertices


def test_labels_reproducible_and_sample_indexed():
    a = assign_labels(G, "bond", 7, sample=3).values
    b = assign_labels(G, "bond", 7, sample=3).values
    c = assign_labels(G, "bond", 7, sample=4).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(a, label_stream(7, 3, G.edge_count))


def test_labels_read_only():
    lab = assign_labels(G, "site", 1)
    with pytest.raises(ValueError):
        lab.values[0] = 0.5


@pytest.mark.parametrize("seed", [-1, 1.5, "x", None, True])
def test_bad_seed(seed):
    with pytest.raises((ValueError, TypeError)):
        check_seed(seed)


def test_bad_mode_and_p():
    with pytest.raises(ValueError, match="mode"):
        assign_labels(G, "edge", 1)
    with pytest.raises(ValueError, match="p"):
        threshold(assign_labels(G, "bond", 1), 1.5)


def test_derive_seed_distinct():
    seeds = {derive_seed(5, L) for L in range(100)}
    assert len(seeds) == 100
    assert derive_seed(5, 3) == derive_seed(5, 3)


def test_threshold_extremes():
    lab = assign_labels(G, "bond", 2)
    assert threshold(lab, 0.0).n_open == 0
    assert threshold(lab, 1.0).n_open == G.edge_count


def test_configuration_from_open_shape():
    with pytest.raises(ValueError, match="open"):
        configuration_from_open(G, "bond", np.ones(3, bool))


def test_csv_roundtrip(tmp_path):
    lab = assign_labels(G, "bond", 9)
    path = tmp_path / "conf.csv"
    write_configuration_csv(path, lab, 0.4)
    values, flags = read_configuration_csv(path)
    assert np.array_equal(values, lab.values)
    assert np.array_equal(flags, lab.values <= 0.4)
    assert path.read_text().splitlines()[0] == "id,label,open"


@given(seed=st.integers(0, 2 ** 32), p=st.floats(0, 1), q=st.floats(0, 1))
def test_threshold_monotone_coupling(seed, p, q):
    lo, hi = sorted((p, q))
    lab = assign_labels(G, "site", seed)
    a, b = threshold(lab, lo).open, threshold(lab, hi).open
    assert np.all(~a | b)


@given(seed=st.integers(0, 2 ** 32))
def test_uniform_mean(seed):
    v = label_stream(seed, 0, 20000)
    assert abs(v.mean() - 0.5) < 5 * np.sqrt(1 / 12 / 20000)
