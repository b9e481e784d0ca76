"""
Tests for dependency graph construction and the normalized Laplacian.
"""

import os
import sys
import tempfile
import unittest
import logging
from pathlib import Path

import networkx as nx
import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.chain_sim import ChainConfig, Topology, generate
from src.depgraph import (
    DependencyGraph,
    GraphRecipe,
    build_graph,
    build_point_graph,
    cut_edges,
    laplacian_operator,
    load_graph,
    normalized_laplacian,
    normalized_laplacian_matvec,
    save_graph,
)
from src.errors import ArgumentError, StructuralError

logging.basicConfig(level=logging.INFO)


def edge_set(g: DependencyGraph) -> set:
    return set(map(tuple, g.edges.tolist()))


class TestRecipes(unittest.TestCase):
    """Edge construction rules."""

    def test_temporal_window(self):
        x = np.zeros((5, 1))
        self.assertEqual(build_point_graph(x, GraphRecipe.temporal_window(1)).n_edges, 4)
        self.assertEqual(build_point_graph(x, GraphRecipe.temporal_window(2)).n_edges, 7)
        self.assertEqual(build_point_graph(x, GraphRecipe.temporal_window(10)).n_edges, 10)

    def test_feature_knn_matches_brute_force(self):
        """Each node is joined to its k nearest rows; the union is symmetric."""
        x = np.random.default_rng(0).standard_normal((40, 2))
        k = 3
        dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        expected = set()
        for i in range(40):
            for j in np.argsort(dist[i])[:k]:
                expected.add((min(i, j), max(i, j)))
        g = build_point_graph(x, GraphRecipe.feature_knn(k))
        self.assertEqual(edge_set(g), expected)
        self.assertTrue((g.degrees >= k).all())

    def test_feature_knn_ties_go_to_smaller_index(self):
        """Four neighbours tie at the centre's nearest distance; k=1 picks the lowest index."""
        x = np.array([
            [0.0, 0.0],
            [0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0],
            [0.0, 1.5], [1.5, 0.0], [0.0, -1.5], [-1.5, 0.0],
        ])
        g = build_point_graph(x, GraphRecipe.feature_knn(1))
        self.assertEqual(edge_set(g), {(0, 1), (1, 5), (2, 6), (3, 7), (4, 8)})
        reversed_rows = build_point_graph(x[[0, 4, 3, 2, 1, 8, 7, 6, 5]], GraphRecipe.feature_knn(1))
        self.assertIn((0, 1), edge_set(reversed_rows))

    def test_feature_knn_equal_spacing(self):
        """On an evenly spaced line interior points pick the left neighbour first."""
        x = np.arange(10, dtype=float)[:, None]
        g = build_point_graph(x, GraphRecipe.feature_knn(1))
        self.assertEqual(edge_set(g), {(i, i + 1) for i in range(9)})
        wide = build_point_graph(x, GraphRecipe.feature_knn(3))
        expected = {(i, i + 1) for i in range(9)} | {(i, i + 2) for i in range(8)} | {(0, 3), (6, 9)}
        self.assertEqual(edge_set(wide), expected)

    def test_spatial_knn(self):
        """Interior cells link to their four axial neighbours."""
        side = 6
        x = np.zeros((side * side, 1))
        g = build_point_graph(x, GraphRecipe.spatial_knn(4), Topology.lattice(side))
        edges = edge_set(g)
        center = 2 * side + 2
        for neighbour in (center - side, center + side, center - 1, center + 1):
            self.assertIn((min(center, neighbour), max(center, neighbour)), edges)
        self.assertEqual(int(g.degrees[center]), 4)
        self.assertTrue(g.is_connected())

    def test_spatial_knn_needs_lattice(self):
        with self.assertRaises(ArgumentError):
            build_point_graph(np.zeros((9, 1)), GraphRecipe.spatial_knn(4))

    def test_feature_knn_too_small(self):
        with self.assertRaises(ArgumentError):
            build_point_graph(np.zeros((3, 1)), GraphRecipe.feature_knn(5))

    def test_union(self):
        x = np.random.default_rng(1).standard_normal((30, 2))
        a = build_point_graph(x, GraphRecipe.temporal_window(1))
        b = build_point_graph(x, GraphRecipe.feature_knn(2))
        union = build_point_graph(x, GraphRecipe.union(GraphRecipe.temporal_window(1), GraphRecipe.feature_knn(2)))
        self.assertEqual(edge_set(union), edge_set(a) | edge_set(b))

    def test_invalid_recipe(self):
        with self.assertRaises(ArgumentError):
            GraphRecipe.temporal_window(0)
        with self.assertRaises(ArgumentError):
            GraphRecipe.union()

    def test_build_graph_from_trajectory(self):
        traj = generate(ChainConfig(t_mix=5, d0=2, n=200, seed=1))
        g = build_graph(traj, GraphRecipe.feature_knn(5))
        self.assertEqual(g.n_nodes, 200)
        self.assertEqual(g.isolated.size, 0)


class TestGraph(unittest.TestCase):
    """Graph container and Laplacian operator."""

    def test_from_edges_normalizes(self):
        g = DependencyGraph.from_edges(4, [(1, 0), (0, 1), (2, 2), (2, 3)])
        self.assertEqual(edge_set(g), {(0, 1), (2, 3)})
        np.testing.assert_array_equal(g.degrees, [1, 1, 1, 1])
        with self.assertRaises(ArgumentError):
            DependencyGraph.from_edges(2, [(0, 5)])

    def test_components_ordered_by_smallest_member(self):
        g = DependencyGraph.from_edges(5, [(3, 4), (0, 2)])
        count, labels = g.components
        self.assertEqual(count, 3)
        np.testing.assert_array_equal(labels, [0, 1, 0, 2, 2])
        self.assertFalse(g.is_connected())

    def test_matvec_matches_networkx(self):
        """Edge-wise matvec equals the dense normalized Laplacian."""
        nxg = nx.gnm_random_graph(30, 80, seed=4)
        nxg.add_edges_from((i, i + 1) for i in range(29))
        g = DependencyGraph.from_edges(30, list(nxg.edges()))
        dense = nx.normalized_laplacian_matrix(nxg, nodelist=range(30)).toarray()
        vec = np.random.default_rng(2).standard_normal(30)
        np.testing.assert_allclose(normalized_laplacian_matvec(g, vec), dense @ vec, atol=1e-12)
        np.testing.assert_allclose(laplacian_operator(g) @ vec, dense @ vec, atol=1e-12)
        np.testing.assert_allclose(normalized_laplacian(g).toarray(), dense, atol=1e-12)

    def test_rayleigh_quotients_in_range(self):
        """Rayleigh quotients of random vectors lie in [0, 2]."""
        rng = np.random.default_rng(5)
        traj = generate(ChainConfig(t_mix=10, d0=2, n=500, seed=3))
        graphs = [
            build_graph(traj, GraphRecipe.union(GraphRecipe.feature_knn(10), GraphRecipe.temporal_window(1))),
            DependencyGraph.from_edges(50, [(i, i + 1) for i in range(49)]),
            DependencyGraph.from_edges(40, [(i, j) for i in range(20) for j in range(20, 40)]),
        ]
        for g in graphs:
            for _ in range(200):
                u = rng.standard_normal(g.n_nodes)
                quotient = float(u @ normalized_laplacian_matvec(g, u)) / float(u @ u)
                self.assertGreaterEqual(quotient, 0.0)
                self.assertLessEqual(quotient, 2.0 + 1e-10)

    def test_symmetric_operator(self):
        g = build_point_graph(np.random.default_rng(6).standard_normal((80, 2)), GraphRecipe.feature_knn(4))
        rng = np.random.default_rng(7)
        u, v = rng.standard_normal((2, 80))
        left = float(u @ normalized_laplacian_matvec(g, v))
        right = float(normalized_laplacian_matvec(g, u) @ v)
        self.assertAlmostEqual(left, right, delta=1e-10 * max(abs(left), 1.0))

    def test_null_vector(self):
        g = DependencyGraph.from_edges(6, [(i, i + 1) for i in range(5)] + [(0, 3)])
        np.testing.assert_allclose(normalized_laplacian_matvec(g, g.sqrt_degrees()), 0.0, atol=1e-12)

    def test_isolated_node_is_singular(self):
        g = DependencyGraph.from_edges(3, [(0, 1)])
        self.assertEqual(list(g.isolated), [2])
        with self.assertRaises(StructuralError):
            normalized_laplacian_matvec(g, np.ones(3))

    def test_induced(self):
        g = DependencyGraph.from_edges(5, [(i, i + 1) for i in range(4)])
        sub = g.induced(np.array([1, 2, 4]))
        self.assertEqual(sub.n_nodes, 3)
        self.assertEqual(edge_set(sub), {(0, 1)})

    def test_cut_edges(self):
        g = DependencyGraph.from_edges(5, [(i, i + 1) for i in range(4)])
        self.assertEqual(cut_edges(g, np.array([0, 0, 1, 1, 2])), 2)
        self.assertEqual(cut_edges(g, np.zeros(5, dtype=int)), 0)
        with self.assertRaises(ArgumentError):
            cut_edges(g, np.array([0, 0, 1, 1, 3]), n_parts=3)

    def test_save_load(self):
        g = DependencyGraph.from_edges(4, [(0, 1), (1, 3)])
        with tempfile.TemporaryDirectory() as tmp:
            save_graph(g, Path(tmp) / "g.txt")
            loaded = load_graph(Path(tmp) / "g.txt")
        self.assertEqual(loaded.n_nodes, 4)
        self.assertEqual(edge_set(loaded), edge_set(g))


if __name__ == '__main__':
    unittest.main()
