"""
Tests for artifact file formats.
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src import storage
from src.errors import ArgumentError, DataError


class TestStorage(unittest.TestCase):
    """Columnar files, atomic CSV writes and edge lists."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_columnar(self):
        """Floats, labels and 2-D arrays come back bit-identical."""
        x = np.random.default_rng(0).standard_normal((50, 3))
        y = np.where(x[:, 0] > 0, 1, -1).astype(np.int8)
        path = self.root / "traj.bin"
        storage.write_columnar(path, {"t_mix": 10, "note": "ok"}, {"x": x, "y": y})
        header, columns = storage.read_columnar(path)
        self.assertEqual(header["t_mix"], "10")
        np.testing.assert_array_equal(columns["x"], x)
        np.testing.assert_array_equal(columns["y"], y)
        self.assertEqual(columns["y"].dtype, np.int8)

    def test_columnar_rejects_newlines(self):
        with self.assertRaises(ArgumentError):
            storage.write_columnar(self.root / "bad.bin", {"k": "a\nb"}, {})

    def test_columnar_bad_magic(self):
        path = self.root / "other.bin"
        path.write_bytes(b"SOMETHING ELSE\n\n")
        with self.assertRaises(DataError):
            storage.read_columnar(path)

    def test_csv_atomic(self):
        """No temp files are left next to the CSV."""
        frame = pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]})
        path = storage.write_csv(frame, self.root / "sub" / "out.csv")
        pd.testing.assert_frame_equal(pd.read_csv(path), frame)
        self.assertEqual(sorted(p.name for p in path.parent.iterdir()), ["out.csv"])

    def test_edge_list(self):
        storage.write_edge_list(self.root / "g.txt", 4, [(0, 1), (1, 2)])
        n, edges = storage.read_edge_list(self.root / "g.txt")
        self.assertEqual(n, 4)
        self.assertEqual(edges, [(0, 1), (1, 2)])

    def test_write_bytes(self):
        path = storage.write_bytes(self.root / "m.bin", b"abc")
        self.assertEqual(path.read_bytes(), b"abc")


if __name__ == '__main__':
    unittest.main()
