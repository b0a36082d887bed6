"""Uniform-label coupling of percolation configurations.

Each element (vertex or edge) carries a label ``U`` uniform on [0, 1]; the
configuration at parameter ``p`` opens exactly the elements with ``U <= p``, so
one label array realises every ``p`` at once and the open set grows with ``p``.

Labels come from a Philox counter-based generator keyed by
``(master seed, sample index)``; the element index is the counter position.
Sample ``i`` is therefore reproducible on its own, whatever order or worker
produced it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import Graph

MODES = ("site", "bond")
_U64 = 1 << 64


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < _U64:
        raise ValueError(f"seed: must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode: must be 'site' or 'bond', got {mode!r}")
    return mode


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 64-bit seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int, sample: int = 0) -> np.random.Generator:
    key = np.array([check_seed(seed), int(sample)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def label_stream(seed: int, sample: int, size: int) -> np.ndarray:
    """The first ``size`` labels of sample ``sample`` under ``seed``."""
    return generator(seed, sample).random(size)


def labels_block(seed: int, start: int, stop: int, size: int) -> np.ndarray:
    """Labels of samples ``start..stop-1`` stacked row-wise."""
    out = np.empty((stop - start, size))
    for row, sample in enumerate(range(start, stop)):
        out[row] = generator(seed, sample).random(size)
    return out


def element_count(graph: Graph, mode: str) -> int:
    return graph.n_vertices if check_mode(mode) == "site" else graph.edge_count


@dataclass(frozen=True, eq=False)
class UniformLabels:
    mode: str
    values: np.ndarray
    seed: int
    graph: Graph
    sample: int = 0

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class Configuration:
    mode: str
    open: np.ndarray
    p: float
    graph: Graph
    seed: int | None = None
    sample: int | None = None

    @property
    def n_open(self) -> int:
        return int(np.count_nonzero(self.open))


def assign_labels(graph: Graph, mode: str, seed: int, sample: int = 0) -> UniformLabels:
    """Draw one uniform label per vertex (``site``) or edge (``bond``)."""
    check_mode(mode)
    size = element_count(graph, mode)
    if graph.n_vertices == 0:
        raise ValueError("graph: cannot label an empty graph")
    values = label_stream(seed, sample, size)
    values.setflags(write=False)
    return UniformLabels(mode, values, check_seed(seed), graph, int(sample))


def check_p(p: float, name: str = "p") -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name}: must lie in [0, 1], got {p!r}")
    return p


def threshold(labels: UniformLabels, p: float) -> Configuration:
    """Open every element whose label is at most ``p``."""
    p = check_p(p)
    return Configuration(labels.mode, labels.values <= p, p, labels.graph, labels.seed, labels.sample)


def configuration_from_open(graph: Graph, mode: str, open_mask, p: float = float("nan")) -> Configuration:
    """Wrap an explicit open/closed array (used by oracles and fixtures)."""
    open_mask = np.asarray(open_mask, dtype=bool)
    if open_mask.shape != (element_count(graph, mode),):
        raise ValueError(f"open: expected {element_count(graph, mode)} flags, got {open_mask.shape}")
    return Configuration(mode, open_mask, p, graph)


def write_configuration_csv(path, labels: UniformLabels, p: float) -> None:
    """Dump ``id,label,open`` rows for every element."""
    conf = threshold(labels, p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "open"])
        for i, (u, o) in enumerate(zip(labels.values.tolist(), conf.open.tolist())):
            w.writerow([i, repr(u), int(o)])


def read_configuration_csv(path) -> tuple[np.ndarray, np.ndarray]:
    ids, labels, flags = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["id"]))
            labels.append(float(row["label"]))
            flags.append(row["open"] == "1")
    if ids != list(range(len(ids))):
        raise ValueError("id: element ids must be dense and ordered")
    return np.array(labels), np.array(flags, dtype=bool)
