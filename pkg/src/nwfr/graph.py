"""Weighted undirected graphs.

Edge weights are path costs: geodesic distances are minimum summed weights.
The module also provides Louvain community detection and a weighted
stochastic block model sampler used by the simulation study.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConnectivityFailure,
    DataError,
    DuplicateEdge,
    FormatError,
    IdOutOfRange,
    NegativeWeight,
    SelfLoop,
)

__all__ = [
    "Network",
    "WeightRule",
    "SbmSpec",
    "build_graph",
    "geodesic_matrix",
    "is_connected",
    "connected_components",
    "louvain_communities",
    "modularity",
    "generate_wsbm",
    "parse_edge_csv",
    "read_edge_csv",
    "write_edge_csv",
]


@dataclass(frozen=True)
class Network:
    """Undirected weighted graph on vertices ``0 .. n_vertices - 1``.

    ``edges`` is stored canonically as sorted ``(u, v, w)`` triples with ``u < v``.
    """

    n_vertices: int
    edges: tuple = ()
    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n_vertices)
        if n < 1:
            raise DataError(f"n_vertices must be positive, got {self.n_vertices}")
        adj = [dict() for _ in range(n)]
        canon = []
        for k, e in enumerate(self.edges):
            try:
                u, v, w = e
            except (TypeError, ValueError):
                raise DataError(f"edge {k} is not a (u, v, weight) triple: {e!r}") from None
            u, v, w = int(u), int(v), float(w)
            if not (0 <= u < n and 0 <= v < n):
                raise IdOutOfRange(f"edge ({u}, {v}) has an id outside [0, {n})")
            if u == v:
                raise SelfLoop(f"self-loop at vertex {u}")
            if not math.isfinite(w):
                raise DataError(f"edge ({u}, {v}) has non-finite weight {w}")
            if w < 0:
                raise NegativeWeight(f"edge ({u}, {v}) has negative weight {w}")
            if v in adj[u]:
                raise DuplicateEdge(f"duplicate edge ({u}, {v})")
            adj[u][v] = w
            adj[v][u] = w
            canon.append((min(u, v), max(u, v), w))
        canon.sort()
        object.__setattr__(self, "n_vertices", n)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "_adj", tuple(adj))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def weight(self, u: int, v: int) -> float | None:
        """Weight of edge ``{u, v}`` or None when absent."""
        return self._adj[u].get(v)

    def neighbors(self, u: int) -> dict:
        return dict(self._adj[u])

    def adjacency(self, weighted: bool = True) -> np.ndarray:
        """Dense symmetric adjacency matrix (weights, or 1 per edge)."""
        a = np.zeros((self.n_vertices, self.n_vertices))
        for u, v, w in self.edges:
            a[u, v] = a[v, u] = w if weighted else 1.0
        return a


def build_graph(n: int, edge_list: Iterable[Sequence]) -> Network:
    """Validate an edge list and build a :class:`Network`."""
    return Network(n, tuple(edge_list))


def _dijkstra(g: Network, source: int) -> np.ndarray:
    dist = np.full(g.n_vertices, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(g.n_vertices, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in g._adj[u].items():
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def geodesic_matrix(g: Network) -> np.ndarray:
    """All-pairs shortest path costs; ``inf`` marks unreachable pairs."""
    out = np.vstack([_dijkstra(g, s) for s in range(g.n_vertices)])
    # path sums can differ in the last bit depending on direction
    return np.minimum(out, out.T)


def connected_components(g: Network) -> list[list[int]]:
    """Components as sorted vertex lists, ordered by smallest member."""
    seen = np.zeros(g.n_vertices, dtype=bool)
    comps = []
    for s in range(g.n_vertices):
        if seen[s]:
            continue
        seen[s] = True
        queue, comp = deque([s]), [s]
        while queue:
            u = queue.popleft()
            for v in g._adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def is_connected(g: Network) -> bool:
    return len(connected_components(g)) == 1


# ---------------------------------------------------------------------------
# Louvain
# ---------------------------------------------------------------------------

def modularity(g: Network, labels: Sequence[int], use_edge_weights: bool = False) -> float:
    """Newman modularity of a vertex labelling."""
    a = g.adjacency(weighted=use_edge_weights)
    two_m = a.sum()
    if two_m == 0:
        return 0.0
    labels = np.asarray(labels)
    k = a.sum(axis=1)
    same = labels[:, None] == labels[None, :]
    return float(((a - np.outer(k, k) / two_m) * same).sum() / two_m)


def _relabel_first_seen(labels: np.ndarray) -> np.ndarray:
    mapping = {}
    out = np.empty(len(labels), dtype=int)
    for i, c in enumerate(labels):
        out[i] = mapping.setdefault(int(c), len(mapping))
    return out


def _local_moves(a: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    m = a.shape[0]
    two_m = a.sum()
    k = a.sum(axis=1)
    comm = np.arange(m)
    tot = k.copy()
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(m):
            ci = comm[i]
            tot[ci] -= k[i]
            nbrs = np.flatnonzero(a[i])
            nbrs = nbrs[nbrs != i]
            links = {}
            for j in nbrs:
                links[comm[j]] = links.get(comm[j], 0.0) + a[i, j]
            best_c = ci
            best_gain = links.get(ci, 0.0) - k[i] * tot[ci] / two_m
            for c in sorted(links):
                gain = links[c] - k[i] * tot[c] / two_m
                if gain > best_gain + 1e-12 * two_m:
                    best_c, best_gain = c, gain
            comm[i] = best_c
            tot[best_c] += k[i]
            if best_c != ci:
                moved = moved_any = True
        if not moved:
            return comm, moved_any


def louvain_communities(g: Network, seed: int = 0, use_edge_weights: bool = False) -> np.ndarray:
    """Louvain modularity optimisation.

    Parameters
    ----------
    g : Network
    seed : int
        Seeds the order in which vertices are swept.  Candidate communities are
        scanned in ascending label order and a move needs a strictly positive gain,
        so the result is reproducible for a fixed seed.
    use_edge_weights : bool
        Stored weights are path costs, not affinities, so modularity is computed
        on the unweighted topology unless this flag is set.

    Returns
    -------
    ndarray of int
        Community label per vertex, contiguous from 0 in order of first appearance.
    """
    rng = np.random.default_rng(seed)
    a = g.adjacency(weighted=use_edge_weights)
    membership = np.arange(g.n_vertices)
    if a.sum() == 0:
        return membership
    while True:
        comm, moved = _local_moves(a, rng)
        if not moved:
            break
        comm = _relabel_first_seen(comm)
        membership = comm[membership]
        s = np.zeros((a.shape[0], comm.max() + 1))
        s[np.arange(a.shape[0]), comm] = 1.0
        a = s.T @ a @ s
        if a.shape[0] == 1:
            break
    return _relabel_first_seen(membership)


# ---------------------------------------------------------------------------
# Weighted stochastic block model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightRule:
    """How edge weights are drawn: ``one``, ``random`` or ``inout``."""

    kind: str = "one"
    intra_range: tuple = (0.1, 0.9)
    inter_range: tuple = (0.1, 0.9)

    def __post_init__(self):
        if self.kind not in ("one", "random", "inout"):
            raise DataError(f"unknown weight rule {self.kind!r}")
        for lo, hi in (self.intra_range, self.inter_range):
            if not (0 < lo <= hi < math.inf):
                raise DataError(f"weight range ({lo}, {hi}) must lie in (0, inf)")

    @classmethod
    def one(cls):
        return cls("one")

    @classmethod
    def random(cls, low=0.1, high=0.9):
        return cls("random", (low, high), (low, high))

    @classmethod
    def inout(cls, intra=(0.3, 0.6), inter=(0.6, 0.9)):
        return cls("inout", tuple(intra), tuple(inter))

    def draw(self, rng: np.random.Generator, same_block: np.ndarray) -> np.ndarray:
        """Weights for pairs flagged intra (True) or inter (False)."""
        same_block = np.asarray(same_block, dtype=bool)
        if self.kind == "one":
            return np.ones(same_block.shape)
        u = rng.random(same_block.shape)
        lo = np.where(same_block, self.intra_range[0], self.inter_range[0])
        hi = np.where(same_block, self.intra_range[1], self.inter_range[1])
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class SbmSpec:
    block_sizes: tuple
    intra_p: object  # scalar or one probability per block
    inter_p: float
    weight_rule: WeightRule = WeightRule()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise DataError("block sizes must be positive")
        intra = np.broadcast_to(np.asarray(self.intra_p, dtype=float), (len(sizes),))
        probs = np.r_[intra, self.inter_p]
        if np.any(probs < 0) or np.any(probs > 1):
            raise DataError("link probabilities must lie in [0, 1]")
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "intra_p", tuple(float(p) for p in intra))

    @property
    def n_vertices(self) -> int:
        return sum(self.block_sizes)

    def blocks(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.block_sizes)), self.block_sizes)


def _sample_sbm(spec: SbmSpec, rng: np.random.Generator) -> tuple[list, np.ndarray]:
    blocks = spec.blocks()
    n = len(blocks)
    iu, ju = np.triu_indices(n, k=1)
    same = blocks[iu] == blocks[ju]
    p = np.where(same, np.asarray(spec.intra_p)[blocks[iu]], spec.inter_p)
    keep = rng.random(len(iu)) < p
    w = spec.weight_rule.draw(rng, same)
    edges = list(zip(iu[keep].tolist(), ju[keep].tolist(), w[keep].tolist()))
    return edges, blocks


def generate_wsbm(spec: SbmSpec, seed: int = 0, max_resamples: int = 20, repair: bool = True) -> Network:
    """Sample a connected weighted SBM graph.

    Up to ``max_resamples`` independent draws are tried.  If every draw is
    disconnected, the last one is bridged by joining each further component to the
    union of the previous ones with one edge whose weight follows the weight rule.
    With ``repair=False`` a :class:`ConnectivityFailure` is raised instead.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max(1, max_resamples)):
        edges, blocks = _sample_sbm(spec, rng)
        g = Network(spec.n_vertices, tuple(edges))
        if is_connected(g):
            return g
    if not repair:
        raise ConnectivityFailure(f"graph still disconnected after {max_resamples} draws")
    comps = connected_components(g)
    joined = list(comps[0])
    for comp in comps[1:]:
        u = int(rng.choice(joined))
        v = int(rng.choice(comp))
        w = float(spec.weight_rule.draw(rng, np.array([blocks[u] == blocks[v]]))[0])
        edges.append((u, v, w))
        joined.extend(comp)
    g = Network(spec.n_vertices, tuple(edges))
    if not is_connected(g):
        raise ConnectivityFailure("bridging did not connect the graph")
    return g


# ---------------------------------------------------------------------------
# Edge-list CSV
# ---------------------------------------------------------------------------

def write_edge_csv(g: Network, path=None) -> str:
    """Write ``u,v,weight`` rows; returns the text, and writes it when ``path`` is given."""
    buf = io.StringIO()
    buf.write("u,v,weight\n")
    for u, v, w in g.edges:
        buf.write(f"{u},{v},{w!r}\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def parse_edge_csv(text: str, n_vertices: int | None = None) -> Network:
    """Parse edge-list CSV text.

    Malformed rows raise :class:`FormatError` naming the line number.  When
    ``n_vertices`` is omitted it is inferred as the largest id plus one.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["u", "v", "weight"]:
        raise FormatError("line 1: expected header 'u,v,weight'")
    edges = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise FormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            u, v, w = int(row[0]), int(row[1]), float(row[2])
        except ValueError:
            raise FormatError(f"line {lineno}: could not parse {','.join(row)!r}") from None
        if u < 0 or v < 0:
            raise FormatError(f"line {lineno}: negative vertex id")
        edges.append((u, v, w))
    if n_vertices is None:
        n_vertices = 1 + max((max(u, v) for u, v, _ in edges), default=0)
    return Network(n_vertices, tuple(edges))


def read_edge_csv(source, n_vertices: int | None = None) -> Network:
    """Read an edge-list CSV from a path or an open text file."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return parse_edge_csv(fh.read(), n_vertices)
    return parse_edge_csv(source.read(), n_vertices)
