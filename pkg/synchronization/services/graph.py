"""
synchronization/services/graph.py

Weighted undirected interconnection graphs.

Responsibilities:
- Build a validated graph from an edge list (or a named family).
- Laplacian L = D - A and its symmetric eigendecomposition (Spectrum).
- The state-disagreement bound sqrt(N) * psi_max / lambda_2.

Connectivity is decided by reachability (networkx); the lambda_2 threshold in
spectral_decomposition is only a cross-check.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from synchronization.services.errors import (
    DuplicateEdge,
    GraphError,
    NodeOutOfRange,
    NonPositiveWeight,
    NotConnected,
    SelfLoop,
)

logger = logging.getLogger(__name__)

# lambda_2 below this fraction of lambda_N counts as disconnected
CONNECTIVITY_RTOL: float = 1e-9
NAMED_FAMILIES: Tuple[str, ...] = ("path", "ring", "complete", "star", "random")
MAX_RANDOM_DRAWS: int = 1000

Edge = Tuple[int, int, float]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: Tuple[Edge, ...]
    adjacency: np.ndarray = field(repr=False)
    connected: bool

    def neighbors(self, i: int) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def laplacian(self) -> np.ndarray:
        return np.diag(self.degree()) - self.adjacency

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_weighted_edges_from(self.edges)
        return g

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}


@dataclass(frozen=True, eq=False)
class Spectrum:
    laplacian: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    basis: np.ndarray = field(repr=False)  # R, N x (N-1)
    Lambda: np.ndarray = field(repr=False)  # diag(lambda_2..lambda_N)

    @property
    def n(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------
def build_graph(n: int, edges: Iterable[Sequence[Any]]) -> Graph:
    n = int(n)
    if n < 2:
        raise GraphError(f"a network needs at least 2 agents, got n={n}")

    seen = set()
    clean: List[Edge] = []
    adjacency = np.zeros((n, n), dtype=float)
    for edge in edges:
        if len(edge) != 3:
            raise GraphError(f"edge must be (i, j, weight), got {edge!r}")
        i, j, w = int(edge[0]), int(edge[1]), float(edge[2])
        for node in (i, j):
            if not 0 <= node < n:
                raise NodeOutOfRange(node, n)
        if i == j:
            raise SelfLoop(i)
        if not (w > 0.0 and math.isfinite(w)):
            raise NonPositiveWeight(i, j, w)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdge(*key)
        seen.add(key)
        clean.append((i, j, w))
        adjacency[i, j] = adjacency[j, i] = w

    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from((i, j) for i, j, _ in clean)
    connected = nx.is_connected(g)

    return Graph(n=n, edges=tuple(clean), adjacency=_frozen(adjacency), connected=connected)


def named_graph(
    family: str,
    n: int,
    weight: float = 1.0,
    seed: Optional[int] = None,
    p: float = 0.5,
) -> Graph:
    """Path, ring, complete, star (node 0 is the hub) or a seeded random connected graph."""
    family = (family or "").strip().lower()
    if family == "path":
        g = nx.path_graph(n)
    elif family == "ring":
        g = nx.cycle_graph(n) if n > 2 else nx.path_graph(n)
    elif family == "complete":
        g = nx.complete_graph(n)
    elif family == "star":
        g = nx.star_graph(n - 1)
    elif family == "random":
        base = 0 if seed is None else int(seed)
        for attempt in range(MAX_RANDOM_DRAWS):
            g = nx.gnp_random_graph(n, p, seed=base + attempt)
            if n >= 2 and nx.is_connected(g):
                logger.debug("[GRAPH] random family: connected draw after %s attempt(s)", attempt + 1)
                break
        else:
            raise NotConnected(f"no connected G({n}, {p}) draw in {MAX_RANDOM_DRAWS} seeds from {base}")
    else:
        raise GraphError(f"unknown graph family {family!r}; expected one of {', '.join(NAMED_FAMILIES)}")

    edges = sorted((min(i, j), max(i, j), float(weight)) for i, j in g.edges())
    return build_graph(n, edges)


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------
def spectral_decomposition(g: Graph) -> Spectrum:
    if not g.connected:
        raise NotConnected()

    lap = g.laplacian()
    values, vectors = np.linalg.eigh(lap)
    order = np.argsort(values, kind="stable")
    values = values[order].copy()
    vectors = vectors[:, order].copy()

    if values[1] < CONNECTIVITY_RTOL * values[-1]:
        raise NotConnected(f"lambda_2={values[1]!r} vanishes relative to lambda_N={values[-1]!r}")
    values[0] = 0.0

    # first clearly nonzero entry of every eigenvector is positive
    for k in range(vectors.shape[1]):
        col = vectors[:, k]
        nonzero = np.flatnonzero(np.abs(col) > 1e-12)
        if nonzero.size and col[nonzero[0]] < 0:
            vectors[:, k] = -col

    basis = vectors[:, 1:].copy()
    return Spectrum(
        laplacian=_frozen(lap),
        eigenvalues=_frozen(values),
        basis=_frozen(basis),
        Lambda=_frozen(np.diag(values[1:])),
    )


def disagreement_bound(spec: Spectrum, psi_max: float) -> float:
    if psi_max <= 0:
        raise ValueError("psi_max must be positive")
    return math.sqrt(spec.n) * float(psi_max) / spec.lambda2
