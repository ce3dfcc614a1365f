"""SWHP parameter checkpoints.

Layout (little-endian)::

    b"SWHP" | u16 version | 32-byte config digest | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 ndim | ndim x u32 extents
                | float32 payload (row-major)
"""
from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

SWHP_MAGIC = b"SWHP"
SWHP_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(text: str | bytes) -> bytes:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).digest()


def dumps_checkpoint(tensors: dict[str, np.ndarray], digest: bytes = b"\0" * 32) -> bytes:
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    buf = io.BytesIO()
    buf.write(SWHP_MAGIC)
    buf.write(struct.pack("<H", SWHP_VERSION))
    buf.write(digest)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode()
        a = np.require(arr, dtype="<f4", requirements="C")  # keeps 0-d tensors 0-d
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], bytes]:
    view = memoryview(data)
    if bytes(view[:4]) != SWHP_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack_from("<H", view, 4)
    if version != SWHP_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = bytes(view[6:38])
    (count,) = struct.unpack_from("<I", view, 38)
    pos = 42
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + n]).decode()
        pos += n
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(view[pos:pos + 4 * size], dtype="<f4").reshape(shape).copy()
        pos += 4 * size
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return tensors, digest


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], digest: bytes = b"\0" * 32) -> None:
    Path(path).write_bytes(dumps_checkpoint(tensors, digest))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], bytes]:
    return loads_checkpoint(Path(path).read_bytes())
