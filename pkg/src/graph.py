from typing import Iterable, List, Optional, Sequence, Tuple

from dataclasses import dataclass

import logging
import numpy as np
import networkx as nx

from src.errors import DisconnectedGraphError, GraphError
from src.vars import GRAPH_RETRIES

logger = logging.getLogger(__name__)


class CommGraph:
    """Undirected, connected communication topology over nodes 0..N-1."""

    def __init__(self,
                 num_nodes: int,
                 edges: Iterable[Tuple[int, int]],
                 positions: Optional[np.ndarray] = None):
        if num_nodes < 1:
            raise GraphError(f"A graph needs at least one node, got {num_nodes}")

        self._graph = nx.Graph()
        self._graph.add_nodes_from(range(num_nodes))
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"Self-loop on node {i}")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise GraphError(f"Edge ({i}, {j}) references a node outside 0..{num_nodes - 1}")
            self._graph.add_edge(i, j)

        self.positions = None if positions is None else np.asarray(positions, dtype=float)
        self.require_connected()

    @property
    def num_nodes(self) -> int:
        return self._graph.number_of_nodes()

    @property
    def num_edges(self) -> int:
        return self._graph.number_of_edges()

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return sorted((min(i, j), max(i, j)) for i, j in self._graph.edges())

    def neighbors(self, i: int) -> List[int]:
        return sorted(self._graph.neighbors(i))

    def degree(self, i: int) -> int:
        return self._graph.degree(i)

    def has_edge(self, i: int, j: int) -> bool:
        return self._graph.has_edge(i, j)

    def components(self) -> List[List[int]]:
        return sorted(sorted(c) for c in nx.connected_components(self._graph))

    def is_connected(self) -> bool:
        return nx.is_connected(self._graph)

    def require_connected(self):
        if not self.is_connected():
            raise DisconnectedGraphError(self.components())

    def diameter(self) -> int:
        return nx.diameter(self._graph)

    def to_networkx(self) -> nx.Graph:
        return self._graph.copy()

    def write_edge_list(self, path: str):
        """Write the "N" header line followed by one "i j" line per edge."""
        with open(path, "w") as f:
            f.write(f"{self.num_nodes}\n")
            for i, j in self.edges:
                f.write(f"{i} {j}\n")

    @classmethod
    def read_edge_list(cls, path: str) -> "CommGraph":
        with open(path, "r") as f:
            lines = [line.strip() for line in f if line.strip()]
        if not lines:
            raise GraphError(f"Edge list '{path}' is empty")
        try:
            num_nodes = int(lines[0])
            edges = [tuple(int(v) for v in line.split()) for line in lines[1:]]
        except ValueError as e:
            raise GraphError(f"Malformed edge list '{path}': {e}")
        for edge in edges:
            if len(edge) != 2:
                raise GraphError(f"Malformed edge line {edge} in '{path}'")
        return cls(num_nodes, edges)


@dataclass(frozen=True)
class WeightMatrix:
    W: np.ndarray

    def row(self, i: int) -> np.ndarray:
        return self.W[i]

    def laplacian_like(self) -> np.ndarray:
        """W̄ = I − W."""
        return np.eye(self.W.shape[0]) - self.W

    def spectrum(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.W))

    def validate(self, graph: CommGraph, tol: float = 1e-12):
        W = self.W
        n = graph.num_nodes
        if W.shape != (n, n):
            raise GraphError(f"Weight matrix has shape {W.shape}, expected ({n}, {n})")
        if np.any(W < -tol):
            raise GraphError("Weight matrix has negative entries")
        if np.max(np.abs(W - W.T)) > tol:
            raise GraphError("Weight matrix is not symmetric")
        if np.max(np.abs(W.sum(axis=1) - 1.0)) > tol or np.max(np.abs(W.sum(axis=0) - 1.0)) > tol:
            raise GraphError("Weight matrix is not doubly stochastic")
        for i in range(n):
            for j in range(n):
                if i != j and not graph.has_edge(i, j) and abs(W[i, j]) > tol:
                    raise GraphError(f"Nonzero weight on non-edge ({i}, {j})")


def metropolis_weights(graph: CommGraph) -> WeightMatrix:
    """
    w_ij = 1 / max(|N_i|, |N_j|) on edges, w_ii = 1 − Σ_j w_ij.

    A leaf-to-leaf edge (only the two-node graph) gets weight ½ instead of 1, which keeps −1 out
    of the spectrum.
    """
    graph.require_connected()
    n = graph.num_nodes
    W = np.zeros((n, n))
    for i, j in graph.edges:
        w = 1.0 / max(graph.degree(i), graph.degree(j), 2)
        W[i, j] = w
        W[j, i] = w
    for i in range(n):
        W[i, i] = 1.0 - sum(W[i, j] for j in graph.neighbors(i))
    return WeightMatrix(W)


def range_limited_graph(positions: Sequence[Sequence[float]], radius: float) -> CommGraph:
    """
    Connect every pair of nodes at most `radius` apart.

    Args:
        positions (Sequence[Sequence[float]]): One 2D point per node.
        radius (float): Communication range.

    Returns:
        CommGraph: The connected range graph. Raises DisconnectedGraphError with the component
        partition otherwise.
    """
    if radius <= 0:
        raise GraphError(f"Communication radius must be positive, got {radius}")
    points = np.asarray(positions, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise GraphError(f"Expected an (N, 2) array of positions, got shape {points.shape}")
    n = points.shape[0]

    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            dist = float(np.linalg.norm(points[i] - points[j]))
            if dist == 0.0:
                raise GraphError(f"Nodes {i} and {j} share a position")
            if dist <= radius:
                edges.append((i, j))
    return CommGraph(n, edges, positions=points)


def chain_graph(num_nodes: int) -> CommGraph:
    if num_nodes < 2:
        raise GraphError(f"A chain needs at least two nodes, got {num_nodes}")
    return CommGraph(num_nodes, [(i, i + 1) for i in range(num_nodes - 1)])


def complete_graph(num_nodes: int) -> CommGraph:
    return CommGraph(num_nodes, [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)])


def random_range_graph(num_nodes: int, radius: float, seed: int, retries: int = GRAPH_RETRIES) -> CommGraph:
    """Sample positions in the unit square until the range graph is connected."""
    rng = np.random.default_rng(seed)
    for attempt in range(1, retries + 1):
        positions = rng.uniform(0.0, 1.0, size=(num_nodes, 2))
        try:
            graph = range_limited_graph(positions, radius)
        except DisconnectedGraphError:
            continue
        logger.debug(f"Connected range graph after {attempt} samples")
        return graph
    raise GraphError(f"No connected graph with {num_nodes} nodes and radius {radius} after {retries} samples")


def fiedler_value(graph: CommGraph) -> float:
    """Second-smallest Laplacian eigenvalue (algebraic connectivity)."""
    if graph.num_nodes < 2:
        return 0.0
    spectrum = np.sort(nx.laplacian_spectrum(graph.to_networkx()))
    return float(spectrum[1])
