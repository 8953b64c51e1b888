"""Event networks from responsibility matrices, with 3-node motif analysis.

Thresholding the off-diagonal responsibilities gives a directed acyclic
graph over events (edges point forward in time). The motif census counts
connected 3-node subsets by their induced edge pattern; significance comes
from a degree-preserving edge-swap null model. Randomized replicates may
contain cycles or mutual edges; such triples fall outside the four DAG
patterns and are tallied under "other".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ResponsibilityMatrix

PATTERNS = ("chain", "fan_out", "fan_in", "ffl")


@dataclass
class EventGraph:
    """Directed graph over event indices, no self-loops or duplicate edges."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        if self.src.shape != self.dst.shape:
            raise ValueError("src and dst must align")
        if self.src.size:
            if self.src.min() < 0 or max(self.src.max(), self.dst.max()) >= self.n_nodes:
                raise ValueError("edge endpoints outside node range")
            if np.any(self.src == self.dst):
                raise ValueError("self-loops are not allowed")
            pairs = set(zip(self.src.tolist(), self.dst.tolist()))
            if len(pairs) != self.src.size:
                raise ValueError("duplicate edges are not allowed")
        if self.weight is not None:
            self.weight = np.asarray(self.weight, dtype=float)
            if self.weight.shape != self.src.shape:
                raise ValueError("weights must align with edges")

    @property
    def n_edges(self):
        return self.src.size

    def edge_set(self):
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def in_degrees(self):
        return np.bincount(self.dst, minlength=self.n_nodes)

    def out_degrees(self):
        return np.bincount(self.src, minlength=self.n_nodes)


def build_event_network(resp, theta=0.1):
    """Edges i -> j for every off-diagonal responsibility p_ij >= theta."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not isinstance(resp, ResponsibilityMatrix):
        raise TypeError("resp must be a ResponsibilityMatrix")
    i, j, p = resp.triggering_entries()
    keep = p >= theta
    return EventGraph(resp.n, i[keep], j[keep], p[keep])


def _classify(has, a, b, c):
    """Induced pattern of the triple; None if disconnected, 'other' if non-DAG."""
    edges = []
    for s, d in ((a, b), (b, a), (a, c), (c, a), (b, c), (c, b)):
        if (s, d) in has:
            edges.append((s, d))
    if len(edges) < 2:
        return None
    und = {frozenset(e) for e in edges}
    if len(und) < 2:
        return None  # a single mutual pair is not a connected triple
    if len(und) != len(edges):
        return "other"  # some pair is bidirectional
    if len(edges) == 3:
        outs = {s for s, _ in edges}
        return "ffl" if len(outs) == 2 else "other"  # 3 distinct sources = cycle
    (s1, d1), (s2, d2) = edges
    if s1 == s2:
        return "fan_out"
    if d1 == d2:
        return "fan_in"
    return "chain"


def motif_census_3(graph):
    """Counts of connected 3-node induced patterns.

    Keys: chain, fan_out, fan_in, ffl, other. Each connected 3-subset counts
    exactly once. For a DAG, "other" is always 0.
    """
    has = graph.edge_set()
    neighbors = [set() for _ in range(graph.n_nodes)]
    for s, d in has:
        neighbors[s].add(d)
        neighbors[d].add(s)
    counts = {p: 0 for p in PATTERNS}
    counts["other"] = 0
    for v in range(graph.n_nodes):
        nb = sorted(neighbors[v])
        for ai in range(len(nb)):
            a = nb[ai]
            for bi in range(ai + 1, len(nb)):
                b = nb[bi]
                linked = b in neighbors[a]
                if linked and not (v < a):
                    continue  # triangle counted once, from its smallest vertex
                pattern = _classify(has, v, a, b)
                if pattern is not None:
                    counts[pattern] += 1
    return counts


def degree_preserving_randomize(graph, n_swaps, seed):
    """Randomize edges by repeated double-edge swaps.

    Each attempt picks two distinct edges (a->b, c->d) and rewires them to
    (a->d, c->b), rejecting swaps that would create self-loops or duplicate
    edges. In- and out-degree sequences are preserved exactly; acyclicity is
    not. Graphs with fewer than two edges come back unchanged.
    """
    if n_swaps < 0:
        raise ValueError("n_swaps must be nonnegative")
    m = graph.n_edges
    if m < 2:
        return EventGraph(graph.n_nodes, graph.src.copy(), graph.dst.copy())
    rng = np.random.default_rng(seed)
    src = graph.src.copy()
    dst = graph.dst.copy()
    has = set(zip(src.tolist(), dst.tolist()))
    for _ in range(int(n_swaps)):
        e1 = int(rng.integers(m))
        e2 = int(rng.integers(m))
        if e1 == e2:
            continue
        a, b = int(src[e1]), int(dst[e1])
        c, d = int(src[e2]), int(dst[e2])
        if a == d or c == b:
            continue
        if (a, d) in has or (c, b) in has:
            continue
        has.discard((a, b))
        has.discard((c, d))
        has.add((a, d))
        has.add((c, b))
        dst[e1] = d
        dst[e2] = b
    return EventGraph(graph.n_nodes, src, dst)


@dataclass(frozen=True)
class MotifScore:
    pattern: str
    count: int
    null_mean: float
    null_sd: float
    z: float | None
    z_infinite: bool

    def as_dict(self):
        return dict(self.__dict__)


def motif_zscores(graph, n_null=100, swap_factor=150, seed=0):
    """Motif counts against a degree-preserving null ensemble.

    Generates n_null randomized replicates, each using swap_factor * n_edges
    swap attempts, and reports z = (count - null mean) / null sd per pattern.
    A zero null sd leaves z undefined (None); if the real count still
    deviates from the null mean, z_infinite marks the divergence.
    """
    if n_null < 2:
        raise ValueError("n_null must be at least 2")
    real = motif_census_3(graph)
    n_swaps = int(swap_factor * graph.n_edges)
    seeds = np.random.SeedSequence(seed).spawn(n_null)
    null_counts = {p: [] for p in PATTERNS}
    for ss in seeds:
        replica = degree_preserving_randomize(graph, n_swaps, ss)
        census = motif_census_3(replica)
        for p in PATTERNS:
            null_counts[p].append(census[p])
    scores = {}
    for p in PATTERNS:
        arr = np.asarray(null_counts[p], dtype=float)
        mean = float(arr.mean())
        sd = float(arr.std(ddof=1))
        if sd > 0:
            z = (real[p] - mean) / sd
            scores[p] = MotifScore(p, real[p], mean, sd, float(z), False)
        else:
            scores[p] = MotifScore(p, real[p], mean, sd, None, real[p] != mean)
    return scores
