"""Independent reference implementations used by the tests (pure Python)."""
from collections import deque
from itertools import product


def flood_fill(n_vertices, edges, open_flags, site):
    """Cluster partition by breadth-first search; returns a set of frozensets."""
    adj = [[] for _ in range(n_vertices)]
    for k, (a, b) in enumerate(edges):
        if site:
            if open_flags[a] and open_flags[b]:
                adj[a].append(b)
                adj[b].append(a)
        elif open_flags[k]:
            adj[a].append(b)
            adj[b].append(a)
    seen = [False] * n_vertices
    parts = set()
    for s in range(n_vertices):
        if seen[s] or (site and not open_flags[s]):
            continue
        comp, queue = [s], deque([s])
        seen[s] = True
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    comp.append(u)
                    queue.append(u)
        parts.add(frozenset(comp))
    return parts


def partition_from_roots(root):
    groups = {}
    for v, r in enumerate(root):
        if r >= 0:
            groups.setdefault(int(r), []).append(v)
    return {frozenset(g) for g in groups.values()}


def crosses(n_vertices, edges, open_edges, left, right):
    for comp in flood_fill(n_vertices, edges, open_edges, site=False):
        if comp & left and comp & right:
            return True
    return False


def bond_crossing_polynomial(n_vertices, edges, left, right):
    """Counts c[k] of open-edge subsets of size k that give a left-right crossing."""
    M = len(edges)
    counts = [0] * (M + 1)
    for bits in product((False, True), repeat=M):
        if crosses(n_vertices, edges, bits, left, right):
            counts[sum(bits)] += 1
    return counts


def polynomial_value(counts, p):
    M = len(counts) - 1
    return sum(c * p ** k * (1 - p) ** (M - k) for k, c in enumerate(counts))
