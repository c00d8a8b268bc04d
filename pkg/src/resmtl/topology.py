"""Agent interaction graphs.

Every graph is undirected and carries a self-loop on each agent, so an
agent always belongs to its own neighborhood.  Three constructors are
provided (complete, random geometric, explicit edge list) plus a loader for
plain-text edge lists.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidAgentError, InvalidSpecError

log = logging.getLogger(__name__)

DEFAULT_REGION = (5.0, 25.0)


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected agent graph with mandatory self-loops.

    ``edges`` stores each unordered pair once as ``(min, max)``.
    """

    n: int
    edges: frozenset
    positions: np.ndarray | None = field(default=None, compare=False)
    disconnected: bool = False
    _nbrs: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        nbrs = [{k} for k in range(self.n)]
        for a, b in self.edges:
            nbrs[a].add(b)
            nbrs[b].add(a)
        object.__setattr__(self, "_nbrs", tuple(tuple(sorted(s)) for s in nbrs))

    def neighbors(self, k: int) -> tuple:
        """Sorted neighborhood of ``k`` (self included)."""
        if not 0 <= k < self.n:
            raise InvalidAgentError(f"agent id {k} out of range [0, {self.n})")
        return self._nbrs[k]

    def degree(self, k: int) -> int:
        return len(self.neighbors(k))

    def has_edge(self, l: int, k: int) -> bool:
        return (min(l, k), max(l, k)) in self.edges

    @property
    def max_degree(self) -> int:
        return max(len(s) for s in self._nbrs)

    def components(self) -> int:
        return _count_components(self.n, self.edges)


def neighborhood(g: NetworkGraph, k: int) -> frozenset:
    """The set N_k = {l : (l, k) in E}, always containing ``k``."""
    return frozenset(g.neighbors(k))


def _closed_edges(n, pairs):
    edges = {(k, k) for k in range(n)}
    for l, k in pairs:
        l, k = int(l), int(k)
        if not (0 <= l < n and 0 <= k < n):
            raise InvalidSpecError(f"edge ({l}, {k}) references an agent outside [0, {n})")
        edges.add((min(l, k), max(l, k)))
    return frozenset(edges)


def _count_components(n, edges):
    if n == 0:
        return 0
    rows = [a for a, _ in edges]
    cols = [b for _, b in edges]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(adj, directed=False)
    return int(count)


def complete_graph(n: int) -> NetworkGraph:
    if n < 1:
        raise InvalidSpecError("complete graph needs n >= 1")
    pairs = [(l, k) for l in range(n) for k in range(l, n)]
    return NetworkGraph(n, _closed_edges(n, pairs))


def explicit_graph(n: int, pairs: Iterable) -> NetworkGraph:
    if n < 1:
        raise InvalidSpecError("explicit graph needs n >= 1")
    edges = _closed_edges(n, pairs)
    return NetworkGraph(n, edges, disconnected=_count_components(n, edges) > 1)


def default_radius(n: int, side: float) -> float:
    """Radius near the connectivity threshold of a random geometric graph."""
    if n < 2:
        return side
    return side * math.sqrt(2.0 * math.log(n) / (math.pi * n))


def geometric_graph(
    n: int,
    radius: float | None = None,
    region=DEFAULT_REGION,
    seed: int | None = None,
    positions=None,
) -> NetworkGraph:
    """Random geometric graph: edge (l, k) iff ||pos_l - pos_k|| <= radius.

    Positions are drawn uniformly from ``region`` squared unless given.  A
    disconnected result is flagged, not rejected.
    """
    lo, hi = region
    if positions is None:
        if n < 1:
            raise InvalidSpecError("geometric graph needs n >= 1")
        positions = np.random.default_rng(seed).uniform(lo, hi, size=(n, 2))
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != n:
        raise InvalidSpecError(f"positions must have shape ({n}, dim)")
    if radius is None:
        radius = default_radius(n, hi - lo)
    if radius < 0:
        raise InvalidSpecError("radius must be non-negative")
    diff = positions[:, None, :] - positions[None, :, :]
    close = np.sqrt(np.sum(diff * diff, axis=-1)) <= radius
    ls, ks = np.nonzero(np.triu(close))
    edges = _closed_edges(n, zip(ls.tolist(), ks.tolist()))
    parts = _count_components(n, edges)
    if parts > 1:
        log.warning("geometric graph (n=%d, radius=%.3g) has %d components", n, radius, parts)
    return NetworkGraph(n, edges, positions=positions, disconnected=parts > 1)


def load_edge_list(path, n: int | None = None) -> NetworkGraph:
    """Read ``l k`` pairs (0-indexed, one per line; ``#`` starts a comment)."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidSpecError(f"{path}:{lineno}: expected 'l k', got {raw!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise InvalidSpecError(f"{path}:{lineno}: non-integer agent id in {raw!r}") from None
    if n is None:
        n = 1 + max((max(p) for p in pairs), default=0)
    return explicit_graph(n, pairs)


def build_graph(spec: Mapping, positions=None) -> NetworkGraph:
    """Build a graph from a topology mapping.

    ``spec["kind"]`` is ``complete``, ``geometric`` or ``explicit``.  For the
    geometric kind, ``positions`` (e.g. from a localization scenario) take
    precedence over freshly sampled ones.
    """
    kind = spec.get("kind")
    n = spec.get("n")
    if kind == "complete":
        return complete_graph(int(n))
    if kind == "geometric":
        return geometric_graph(
            int(n),
            radius=spec.get("radius"),
            region=tuple(spec.get("region", DEFAULT_REGION)),
            seed=spec.get("seed"),
            positions=positions,
        )
    if kind == "explicit":
        if spec.get("edge_file"):
            return load_edge_list(spec["edge_file"], n=None if n is None else int(n))
        if n is None:
            raise InvalidSpecError("explicit topology needs n")
        return explicit_graph(int(n), spec.get("edges", []))
    raise InvalidSpecError(f"unknown topology kind {kind!r}")
