"""
Seed streams and content hashes.

Streams are derived from a master seed through ``numpy.random.SeedSequence``
keyed by an integer path, so every (cell, seed index, learner) triple gets
an independent, reproducible generator.
"""

import json
import hashlib
from typing import Any, Sequence

import numpy as np

# Keys are folded into 32-bit words for the SeedSequence spawn key.
_WORD = 0xFFFFFFFF


def _fold(key: Any) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _WORD
    digest = hashlib.sha1(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(master_seed: int, *keys: Any) -> np.random.SeedSequence:
    """Return the SeedSequence at ``keys`` below ``master_seed``."""
    return np.random.SeedSequence(
        entropy=int(master_seed) & ((1 << 64) - 1),
        spawn_key=tuple(_fold(k) for k in keys),
    )


def stream(master_seed: int, *keys: Any) -> np.random.Generator:
    """Return an independent generator for the given key path.

    Args:
        master_seed: 64-bit master seed
        *keys: Path below the master seed (ints or strings)

    Returns:
        numpy Generator backed by Philox (counter-based)
    """
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *keys)))


def derive_seed(master_seed: int, *keys: Any) -> int:
    """Return a 64-bit integer seed for the given key path."""
    state = seed_sequence(master_seed, *keys).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def learner_streams(seed: int, m: int) -> Sequence[np.random.Generator]:
    """Return one generator per learner; learner j depends only on (seed, j)."""
    return [stream(seed, "learner", j) for j in range(m)]


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(obj: Any, length: int = 12) -> str:
    """Git blob hash of the canonical JSON form of ``obj``.

    Args:
        obj: JSON-serializable config
        length: Number of hex digits to keep

    Returns:
        Hex digest prefix
    """
    payload = canonical_json(obj).encode("utf-8")
    header = f"blob {len(payload)}\0".encode("utf-8")
    return hashlib.sha1(header + payload).hexdigest()[:length]
