"""Binary tensor serialization and named-tensor checkpoint archives.

Single-tensor format ("FLT1"), little-endian:

    magic   4 bytes  b"FLT1"
    rank    u64
    extents rank x u64
    payload float64 values, row-major

Checkpoint archive ("FLNT"): a JSON config header followed by named FLT1
records. Embedding dumps pair a JSONL manifest with a payload file of
concatenated FLT1 tensors addressed by byte offset.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"FLT1"
ARCHIVE_MAGIC = b"FLNT"
ARCHIVE_VERSION = 1


class SerializationError(IOError):
    """Corrupt or mismatched on-disk tensor data."""


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> int:
    """Append one tensor record; returns the number of bytes written."""
    arr = np.asarray(arr, dtype=np.float64, order="C")  # keeps 0-d rank intact
    header = TENSOR_MAGIC + struct.pack("<Q", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes()
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise SerializationError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
    extents = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = 1
    for e in extents:
        count *= e
    raw = _read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(extents).copy()


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise SerializationError(f"truncated tensor data: wanted {n} bytes, got {len(raw)}")
    return raw


def save_archive(path, config: dict, tensors: dict[str, np.ndarray]):
    """Write a named-tensor archive with a JSON config header.

    Tensor order follows the dict's insertion order, so identical inputs
    produce byte-identical files.
    """
    header = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<II", ARCHIVE_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            write_tensor(fh, arr)


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ARCHIVE_MAGIC:
            raise SerializationError(
                f"bad archive magic {magic!r}, expected {ARCHIVE_MAGIC!r}"
            )
        version, header_len = struct.unpack("<II", _read_exact(fh, 8))
        if version != ARCHIVE_VERSION:
            raise SerializationError(f"unsupported archive version {version}")
        config = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            tensors[name] = read_tensor(fh)
    return config, tensors
