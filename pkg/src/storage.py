"""
File formats for SpecRoute artifacts.

- columnar binary: text header of key=value lines, then raw little-endian
  column bytes (trajectories, replay buffers)
- CSV: pandas frames written atomically (temp file + rename)
- edge lists: ``n=<n>`` header and one ``i j`` pair per line
"""

import os
import tempfile
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import ArgumentError, DataError

logger = logging.getLogger("specroute.storage")

COLUMNAR_MAGIC = "SPECROUTE-COLUMNAR 1"
PathLike = Union[str, Path]


def _atomic_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_columnar(path: PathLike, header: Dict[str, object], columns: Dict[str, np.ndarray]) -> None:
    """Write a header and named columns to a columnar binary file.

    Args:
        path: Destination file
        header: Key/value metadata (values are stringified; no newlines or '=' in keys)
        columns: Arrays; floats are stored as <f8, small ints as i1, others as <i8
    """
    lines = [COLUMNAR_MAGIC]
    for key, value in header.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise ArgumentError(f"Header entry {key!r} is not representable")
        lines.append(f"{key}={text}")

    specs, blobs = [], []
    for name, array in columns.items():
        array = np.asarray(array)
        if array.dtype.kind == "f":
            stored = array.astype("<f8")
        elif array.dtype.kind in "iub" and array.size and array.min() >= -128 and array.max() <= 127:
            stored = array.astype("i1")
        else:
            stored = array.astype("<i8")
        shape = "x".join(str(s) for s in stored.shape)
        specs.append(f"{name}:{stored.dtype.str}:{shape}")
        blobs.append(np.ascontiguousarray(stored).tobytes())
    lines.append("columns=" + ";".join(specs))

    payload = ("\n".join(lines) + "\n\n").encode("utf-8") + b"".join(blobs)
    _atomic_bytes(Path(path), payload)
    logger.debug(f"Wrote columnar file {path} with columns {list(columns)}")


def read_columnar(path: PathLike) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Read a file written by :func:`write_columnar`.

    Returns:
        (header, columns)
    """
    raw = Path(path).read_bytes()
    split = raw.find(b"\n\n")
    if split < 0:
        raise DataError(f"{path} is not a columnar file")
    text_lines = raw[:split].decode("utf-8").split("\n")
    if text_lines[0] != COLUMNAR_MAGIC:
        raise DataError(f"{path}: unsupported format {text_lines[0]!r}")

    header = dict(line.split("=", 1) for line in text_lines[1:])
    spec = header.pop("columns", "")
    body = memoryview(raw)[split + 2:]
    columns: Dict[str, np.ndarray] = {}
    offset = 0
    for entry in filter(None, spec.split(";")):
        name, dtype, shape_text = entry.split(":")
        shape = tuple(int(s) for s in shape_text.split("x")) if shape_text else ()
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        columns[name] = np.frombuffer(body, dtype=dt, count=count, offset=offset).reshape(shape).copy()
        offset += count * dt.itemsize
    if offset != len(body):
        raise DataError(f"{path}: {len(body) - offset} trailing bytes")
    return header, columns


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write a DataFrame to CSV atomically.

    Args:
        frame: Data to write
        path: Destination CSV

    Returns:
        The destination path
    """
    path = Path(path)
    _atomic_bytes(path, frame.to_csv(index=False).encode("utf-8"))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_edge_list(path: PathLike, n_nodes: int, edges: Iterable[Tuple[int, int]]) -> None:
    """Write an edge list text file (``n=<n>`` header, ``i j`` per line)."""
    lines = [f"n={n_nodes}"] + [f"{i} {j}" for i, j in edges]
    _atomic_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_edge_list(path: PathLike) -> Tuple[int, List[Tuple[int, int]]]:
    """Read an edge list written by :func:`write_edge_list`."""
    lines = Path(path).read_text().strip().split("\n")
    if not lines[0].startswith("n="):
        raise DataError(f"{path}: missing n=<n> header")
    n_nodes = int(lines[0][2:])
    edges = []
    for line in lines[1:]:
        i, j = line.split()
        edges.append((int(i), int(j)))
    return n_nodes, edges


def write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write raw bytes atomically."""
    path = Path(path)
    _atomic_bytes(path, payload)
    return path
