"""
Tests for seed streams and content hashes.
"""

import os
import sys
import hashlib
import unittest

import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.seeding import canonical_json, content_hash, derive_seed, learner_streams, stream


class TestSeeding(unittest.TestCase):
    """Streams are reproducible and keyed by their path."""

    def test_stream_reproducible(self):
        a = stream(7, "chain", 3).standard_normal(5)
        b = stream(7, "chain", 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_paths_differ(self):
        a = stream(7, "chain", 3).standard_normal(5)
        self.assertFalse(np.array_equal(a, stream(7, "chain", 4).standard_normal(5)))
        self.assertFalse(np.array_equal(a, stream(8, "chain", 3).standard_normal(5)))
        self.assertFalse(np.array_equal(a, stream(7, "eval", 3).standard_normal(5)))

    def test_derive_seed_is_64_bit(self):
        seed = derive_seed(1, "x")
        self.assertGreaterEqual(seed, 0)
        self.assertLess(seed, 2 ** 64)
        self.assertEqual(seed, derive_seed(1, "x"))

    def test_learner_streams_depend_on_index_only(self):
        """Learner j's stream does not depend on how many learners exist."""
        short = learner_streams(11, 3)
        long = learner_streams(11, 6)
        for j in range(3):
            np.testing.assert_array_equal(short[j].integers(0, 100, 10), long[j].integers(0, 100, 10))

    def test_content_hash_is_git_blob_hash(self):
        obj = {"b": 1, "a": [1, 2]}
        payload = canonical_json(obj).encode("utf-8")
        expected = hashlib.sha1(b"blob " + str(len(payload)).encode() + b"\0" + payload).hexdigest()
        self.assertEqual(content_hash(obj, length=40), expected)
        self.assertEqual(len(content_hash(obj)), 12)

    def test_content_hash_ignores_key_order(self):
        self.assertEqual(content_hash({"a": 1, "b": 2}), content_hash({"b": 2, "a": 1}))
        self.assertNotEqual(content_hash({"a": 1}), content_hash({"a": 2}))


if __name__ == '__main__':
    unittest.main()
