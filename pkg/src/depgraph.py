"""
Empirical dependency graphs.

Builds the unweighted undirected graph over sample indices (temporal window,
spatial k-NN on the lattice, feature k-NN, or unions of these) and exposes
the normalized Laplacian I - D^{-1/2} W D^{-1/2} as an edge-wise operator.
"""

import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _csgraph_components
from scipy.sparse.linalg import LinearOperator
from scipy.spatial import cKDTree

from src.chain_sim import Topology, Trajectory
from src.errors import ArgumentError, StructuralError
from src import storage

logger = logging.getLogger("specroute.depgraph")


class RecipeMode(str, enum.Enum):
    TEMPORAL_WINDOW = "temporal_window"
    SPATIAL_KNN = "spatial_knn"
    FEATURE_KNN = "feature_knn"
    UNION = "union"


@dataclass(frozen=True)
class GraphRecipe:
    """How to connect sample indices: a window, a k-NN rule, or a union."""

    mode: RecipeMode
    param: int = 1
    parts: Tuple["GraphRecipe", ...] = ()

    @classmethod
    def temporal_window(cls, tau: int = 1) -> "GraphRecipe":
        return cls(RecipeMode.TEMPORAL_WINDOW, int(tau)).validate()

    @classmethod
    def spatial_knn(cls, k: int = 4) -> "GraphRecipe":
        return cls(RecipeMode.SPATIAL_KNN, int(k)).validate()

    @classmethod
    def feature_knn(cls, k: int = 10) -> "GraphRecipe":
        return cls(RecipeMode.FEATURE_KNN, int(k)).validate()

    @classmethod
    def union(cls, *parts: "GraphRecipe") -> "GraphRecipe":
        return cls(RecipeMode.UNION, 0, tuple(parts)).validate()

    def validate(self) -> "GraphRecipe":
        if self.mode is RecipeMode.UNION:
            if not self.parts:
                raise ArgumentError("Union recipe needs at least one part")
            for part in self.parts:
                part.validate()
        elif self.param < 1:
            raise ArgumentError(f"{self.mode.value} parameter must be >= 1, got {self.param}")
        return self

    def describe(self) -> str:
        if self.mode is RecipeMode.UNION:
            return "union(" + ",".join(p.describe() for p in self.parts) + ")"
        return f"{self.mode.value}({self.param})"


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    """Simple undirected graph: sorted (i < j) edge array and degree vector."""

    n_nodes: int
    edges: np.ndarray
    degrees: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Union[np.ndarray, Sequence[Tuple[int, int]]]) -> "DependencyGraph":
        """Normalize an edge collection: orient i < j, drop self-loops and duplicates."""
        pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n_nodes):
            raise ArgumentError("Edge endpoint out of range")
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        pairs = np.unique(pairs, axis=0) if pairs.size else np.empty((0, 2), dtype=np.int64)
        degrees = np.bincount(pairs.ravel(), minlength=n_nodes).astype(np.int64)
        pairs.setflags(write=False)
        degrees.setflags(write=False)
        return cls(int(n_nodes), pairs, degrees)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def isolated(self) -> np.ndarray:
        """Indices of degree-0 nodes."""
        return np.flatnonzero(self.degrees == 0)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as a sparse CSR matrix."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * self.n_edges)
        return sp.csr_matrix(
            (data, (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n_nodes, self.n_nodes),
        )

    @cached_property
    def components(self) -> Tuple[int, np.ndarray]:
        """(count, labels) of connected components, labels ordered by smallest member."""
        count, labels = _csgraph_components(self.adjacency, directed=False)
        first_seen = np.full(count, self.n_nodes)
        np.minimum.at(first_seen, labels, np.arange(self.n_nodes))
        rank = np.argsort(np.argsort(first_seen, kind="stable"), kind="stable")
        return int(count), rank[labels]

    def is_connected(self) -> bool:
        return self.n_nodes > 0 and self.components[0] == 1

    def sqrt_degrees(self) -> np.ndarray:
        """D^{1/2} 1, the trivial null vector of the normalized Laplacian."""
        return np.sqrt(self.degrees.astype(float))

    def induced(self, nodes: np.ndarray) -> "DependencyGraph":
        """Subgraph induced by ``nodes`` (relabelled 0..len(nodes)-1 in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        position = np.full(self.n_nodes, -1, dtype=np.int64)
        position[nodes] = np.arange(nodes.shape[0])
        mapped = position[self.edges]
        keep = (mapped >= 0).all(axis=1)
        return DependencyGraph.from_edges(nodes.shape[0], mapped[keep])


def _temporal_edges(n: int, tau: int) -> np.ndarray:
    blocks = [np.column_stack([np.arange(n - d), np.arange(d, n)]) for d in range(1, min(tau, n - 1) + 1)]
    return np.concatenate(blocks) if blocks else np.empty((0, 2), dtype=np.int64)


def _grid_offsets(k: int) -> np.ndarray:
    """Candidate (di, dj) offsets ordered by distance, then by neighbor index."""
    radius = int(np.ceil(2.0 * np.sqrt(k))) + 1
    span = np.arange(-radius, radius + 1)
    di, dj = np.meshgrid(span, span, indexing="ij")
    di, dj = di.ravel(), dj.ravel()
    keep = (di != 0) | (dj != 0)
    di, dj = di[keep], dj[keep]
    order = np.lexsort((dj, di, di ** 2 + dj ** 2))
    return np.column_stack([di[order], dj[order]])


def _spatial_knn_edges(side: int, k: int) -> np.ndarray:
    offsets = _grid_offsets(k)
    rows, cols = np.divmod(np.arange(side * side), side)
    ni = rows[:, None] + offsets[None, :, 0]
    nj = cols[:, None] + offsets[None, :, 1]
    valid = (ni >= 0) & (ni < side) & (nj >= 0) & (nj < side)
    chosen = valid & (np.cumsum(valid, axis=1) <= k)
    src, slot = np.nonzero(chosen)
    dst = ni[src, slot] * side + nj[src, slot]
    return np.column_stack([src, dst])


def _feature_knn_edges(x: np.ndarray, k: int) -> np.ndarray:
    """Each row's k nearest other rows; ties in distance go to the smaller index."""
    n = x.shape[0]
    tree = cKDTree(x)
    width = min(k + 2, n)
    dist, idx = tree.query(x, k=width)
    dist, idx = dist.reshape(n, width), idx.reshape(n, width)
    is_self = idx == np.arange(n)[:, None]
    # self last, then by distance, then by index
    order = np.lexsort((idx, dist, is_self), axis=-1)[:, :k]
    chosen = np.take_along_axis(idx, order, axis=1)
    if width < n:
        kth = np.take_along_axis(dist, order, axis=1)[:, -1]
        # the query may have cut a tie at the k-th distance; re-collect those rows exactly
        for i in np.flatnonzero(dist[:, -1] <= kth):
            ball = np.asarray(tree.query_ball_point(x[i], kth[i] * (1 + 1e-9) + 1e-300), dtype=np.int64)
            ball = ball[ball != i]
            gaps = np.linalg.norm(x[ball] - x[i], axis=1)
            chosen[i] = ball[np.lexsort((ball, gaps))[:k]]
    src = np.repeat(np.arange(n), k)
    return np.column_stack([src, chosen.ravel()])


def _recipe_edges(x: np.ndarray, topology: Topology, recipe: GraphRecipe) -> np.ndarray:
    n = x.shape[0]
    if recipe.mode is RecipeMode.TEMPORAL_WINDOW:
        return _temporal_edges(n, recipe.param)
    if recipe.mode is RecipeMode.SPATIAL_KNN:
        if not topology.is_lattice:
            raise ArgumentError("SpatialKnn requires a Lattice2D trajectory")
        return _spatial_knn_edges(topology.side, recipe.param)
    if recipe.mode is RecipeMode.FEATURE_KNN:
        if n < recipe.param + 1:
            raise ArgumentError(f"FeatureKnn(k={recipe.param}) needs n >= k + 1, got n={n}")
        return _feature_knn_edges(x, recipe.param)
    return np.concatenate([_recipe_edges(x, topology, part) for part in recipe.parts])


def build_point_graph(x: np.ndarray, recipe: GraphRecipe, topology: Optional[Topology] = None) -> DependencyGraph:
    """Build a dependency graph over the rows of ``x``.

    k-NN relations are symmetrized by edge union. Degree-0 nodes are not an
    error here; they are reported through ``DependencyGraph.isolated``.

    Args:
        x: (n, d) points, one node per row, in sequence order
        recipe: Edge construction rule
        topology: Index topology (Path1D when omitted)

    Returns:
        DependencyGraph
    """
    recipe.validate()
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    n = x.shape[0]
    graph = DependencyGraph.from_edges(n, _recipe_edges(x, topology or Topology.path(), recipe))
    if graph.n_edges == 0 or graph.isolated.size:
        logger.warning(
            f"Graph {recipe.describe()} on n={n}: {graph.n_edges} edges, "
            f"{graph.isolated.size} isolated node(s)"
        )
    else:
        logger.debug(f"Built {recipe.describe()} graph: n={n}, |E|={graph.n_edges}")
    return graph


def build_graph(traj: Trajectory, recipe: GraphRecipe) -> DependencyGraph:
    """Build the dependency graph of a trajectory (nodes are sample indices)."""
    return build_point_graph(traj.x, recipe, traj.topology)


def _check_degrees(g: DependencyGraph) -> np.ndarray:
    if g.isolated.size:
        raise StructuralError(f"Normalized Laplacian is singular: {g.isolated.size} node(s) have degree 0")
    return 1.0 / g.sqrt_degrees()


def normalized_laplacian_matvec(g: DependencyGraph, vec: np.ndarray) -> np.ndarray:
    """Compute L~ vec edge by edge, without forming an n x n matrix.

    Args:
        g: Graph with all degrees >= 1
        vec: Vector of length n_nodes

    Returns:
        (I - D^{-1/2} W D^{-1/2}) vec
    """
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (g.n_nodes,):
        raise ArgumentError(f"Vector length {vec.shape} does not match n_nodes={g.n_nodes}")
    inv_sqrt = _check_degrees(g)
    scaled = vec * inv_sqrt
    i, j = g.edges[:, 0], g.edges[:, 1]
    neighbor_sum = np.bincount(i, weights=scaled[j], minlength=g.n_nodes)
    neighbor_sum += np.bincount(j, weights=scaled[i], minlength=g.n_nodes)
    return vec - inv_sqrt * neighbor_sum


def laplacian_operator(g: DependencyGraph) -> LinearOperator:
    """The normalized Laplacian as a matrix-free scipy LinearOperator."""
    _check_degrees(g)
    return LinearOperator(
        shape=(g.n_nodes, g.n_nodes),
        matvec=lambda v: normalized_laplacian_matvec(g, np.ravel(v)),
        dtype=float,
    )


def normalized_affinity(g: DependencyGraph) -> sp.csr_matrix:
    """Sparse D^{-1/2} W D^{-1/2}."""
    inv_sqrt = sp.diags(_check_degrees(g))
    return (inv_sqrt @ g.adjacency @ inv_sqrt).tocsr()


def normalized_laplacian(g: DependencyGraph) -> sp.csr_matrix:
    """Sparse I - D^{-1/2} W D^{-1/2} (used for factorizations)."""
    return (sp.identity(g.n_nodes, format="csr") - normalized_affinity(g)).tocsr()


def cut_edges(g: DependencyGraph, assignment: np.ndarray, n_parts: Optional[int] = None) -> int:
    """Count edges whose endpoints carry different partition labels.

    Args:
        g: Graph
        assignment: Label per node, in [0, n_parts)
        n_parts: Number of partitions (defaults to max label + 1)

    Returns:
        Number of cut edges
    """
    labels = np.asarray(assignment)
    if labels.shape != (g.n_nodes,):
        raise ArgumentError(f"Assignment length {labels.shape} does not match n_nodes={g.n_nodes}")
    if labels.size and (labels.min() < 0 or (n_parts is not None and labels.max() >= n_parts)):
        raise ArgumentError(f"Partition label out of range [0, {n_parts})")
    if g.n_edges == 0:
        return 0
    return int(np.count_nonzero(labels[g.edges[:, 0]] != labels[g.edges[:, 1]]))


def save_graph(g: DependencyGraph, path: Union[str, Path]) -> None:
    """Write the graph as an edge-list text file."""
    storage.write_edge_list(path, g.n_nodes, map(tuple, g.edges.tolist()))


def load_graph(path: Union[str, Path]) -> DependencyGraph:
    """Read a graph written by :func:`save_graph`."""
    n_nodes, edges = storage.read_edge_list(path)
    return DependencyGraph.from_edges(n_nodes, edges)
