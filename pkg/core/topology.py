"""Communication graph of the fleet and the matrices derived from it."""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from core.constants import LAPLACIAN_TOLERANCE
from core.errors import StaleNodeError, UnsafeRemovalError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FormationGraph:
    """Undirected, unweighted topology. Node labels survive removals."""
    adjacency: np.ndarray
    node_ids: Tuple[int, ...]

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.int64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 1:
            raise ValueError("a graph needs at least one node")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must have a zero diagonal")
        ids = tuple(int(i) for i in self.node_ids)
        if len(ids) != adj.shape[0] or len(set(ids)) != len(ids):
            raise ValueError("node_ids must be unique and match the adjacency size")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "node_ids", ids)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index_of(self, node: int) -> int:
        try:
            return self.node_ids.index(node)
        except ValueError:
            raise StaleNodeError(node) from None

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.node_ids)
        rows, cols = np.nonzero(np.triu(self.adjacency))
        g.add_edges_from((self.node_ids[r], self.node_ids[c]) for r, c in zip(rows, cols))
        return g

    def __repr__(self) -> str:
        return f"FormationGraph(nodes={list(self.node_ids)}, edges={int(self.adjacency.sum()) // 2})"


def from_adjacency(adjacency: Sequence[Sequence[int]], labels: Optional[Iterable[int]] = None) -> FormationGraph:
    adj = np.asarray(adjacency, dtype=np.int64)
    ids = tuple(labels) if labels is not None else tuple(range(adj.shape[0]))
    return FormationGraph(adj, ids)


def cycle_graph(n: int, labels: Optional[Iterable[int]] = None) -> FormationGraph:
    if n < 3:
        raise ValueError(f"a cycle needs at least 3 nodes, got {n}")
    return from_adjacency(nx.to_numpy_array(nx.cycle_graph(n), dtype=np.int64), labels)


def from_networkx(g: nx.Graph) -> FormationGraph:
    """Build from a networkx graph whose nodes are integer labels."""
    order = sorted(g.nodes)
    return from_adjacency(nx.to_numpy_array(g, nodelist=order, dtype=np.int64), order)


def degree_matrix(g: FormationGraph) -> np.ndarray:
    return np.diag(g.degrees())


def laplacian(g: FormationGraph) -> np.ndarray:
    """L = D - A. Exact integer arithmetic, returned as float."""
    lap = degree_matrix(g) - g.adjacency
    assert np.all(np.abs(lap.sum(axis=1)) < LAPLACIAN_TOLERANCE)
    return lap.astype(float)


def normalized_laplacian(g: FormationGraph) -> np.ndarray:
    """Row-normalized Laplacian D^-1 L used by the averaging control law.

    Rows of isolated nodes are left at zero; those nodes receive no control.
    """
    deg = g.degrees().astype(float)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return inv[:, None] * laplacian(g)


def averaging_weights(g: FormationGraph) -> np.ndarray:
    """W = D^-1 A, the neighbour averaging matrix."""
    deg = g.degrees().astype(float)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return inv[:, None] * g.adjacency


def laplacian_spectrum(g: FormationGraph) -> np.ndarray:
    return np.linalg.eigvalsh(laplacian(g))


def normalized_spectrum(g: FormationGraph) -> np.ndarray:
    """Eigenvalues of D^-1 L, via the similar symmetric matrix D^-1/2 L D^-1/2."""
    deg = g.degrees().astype(float)
    s = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    sym = s[:, None] * laplacian(g) * s[None, :]
    return np.clip(np.linalg.eigvalsh(sym), 0.0, None)


def neighbors(g: FormationGraph, i: int) -> Set[int]:
    row = g.adjacency[g.index_of(i)]
    return {g.node_ids[j] for j in np.flatnonzero(row)}


def is_connected(g: FormationGraph) -> bool:
    return nx.is_connected(g.to_networkx())


def is_two_connected(g: FormationGraph) -> bool:
    """True iff more than two nodes and every single-vertex deletion stays connected."""
    if g.n_nodes <= 2:
        return False
    full = g.to_networkx()
    if not nx.is_connected(full):
        return False
    for v in full.nodes:
        rest = full.subgraph(n for n in full.nodes if n != v)
        if not nx.is_connected(rest):
            return False
    return True


def remove_node(g: FormationGraph, k: int) -> FormationGraph:
    """Zero row and column k, drop them, and recompute degrees from what is left."""
    idx = g.index_of(k)
    adj = np.array(g.adjacency)
    adj[idx, :] = 0
    adj[:, idx] = 0
    keep = [j for j in range(g.n_nodes) if j != idx]
    ids = tuple(g.node_ids[j] for j in keep)
    if not ids:
        raise UnsafeRemovalError(f"removing node {k} would leave an empty fleet")
    result = FormationGraph(adj[np.ix_(keep, keep)], ids)
    if not is_connected(result):
        raise UnsafeRemovalError(f"removing node {k} would disconnect the graph")
    log.debug("Removed node %s, %d nodes remain", k, result.n_nodes)
    return result


def subgraph(g: FormationGraph, keep: Iterable[int]) -> FormationGraph:
    """Induced subgraph on the given labels, rebuilt from scratch."""
    keep_ids = [i for i in g.node_ids if i in set(keep)]
    idx = [g.index_of(i) for i in keep_ids]
    return FormationGraph(g.adjacency[np.ix_(idx, idx)], tuple(keep_ids))
