"""
Read and write the ``TSLW0001`` tensor container.

Layout::

    8 bytes   magic b"TSLW0001"
    8 bytes   header length N, little-endian unsigned
    N bytes   UTF-8 JSON header, space padded so the payload starts 64-byte aligned
    payload   raw little-endian float32 arrays, each starting on a 64-byte boundary

The header is ``{"metadata": {...}, "tensors": [{"name", "dtype", "shape",
"offset", "nbytes"}, ...]}`` with offsets relative to the payload start.
Serialization is canonical (sorted keys, fixed separators, fixed padding), so
reading a file and writing it back reproduces it byte for byte.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ContainerError

MAGIC = b"TSLW0001"
ALIGN = 64
_DTYPE = "float32"
_PREFIX = len(MAGIC) + 8


def _pad_to(n: int) -> int:
    return -n % ALIGN


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def to_bytes(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(data)):
            raise ContainerError(f"tensor {name!r} contains non-finite values")
        offset += _pad_to(offset)
        entries.append({"name": name, "dtype": _DTYPE, "shape": list(data.shape), "offset": offset, "nbytes": data.nbytes})
        blobs.append((offset, data.tobytes()))
        offset += data.nbytes
    header = dumps_json({"metadata": dict(metadata or {}), "tensors": entries}).encode("utf-8")
    header += b" " * _pad_to(_PREFIX + len(header))
    payload = bytearray(offset)
    for start, raw in blobs:
        payload[start : start + len(raw)] = raw
    return MAGIC + struct.pack("<Q", len(header)) + header + bytes(payload)


def from_bytes(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(buf) < _PREFIX:
        raise ContainerError(f"file too short ({len(buf)} bytes) to hold a container prefix")
    if buf[:8] != MAGIC:
        raise ContainerError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack("<Q", buf[8:_PREFIX])
    if _PREFIX + hlen > len(buf):
        raise ContainerError(f"header length {hlen} runs past end of file ({len(buf)} bytes)")
    try:
        header = json.loads(buf[_PREFIX : _PREFIX + hlen].decode("utf-8"))
        entries = header["tensors"]
        metadata = header["metadata"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from None
    payload = memoryview(buf)[_PREFIX + hlen :]
    tensors: dict[str, np.ndarray] = {}
    end = 0
    for e in entries:
        name, shape, offset, nbytes = e["name"], tuple(e["shape"]), e["offset"], e["nbytes"]
        if e.get("dtype") != _DTYPE:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {e.get('dtype')!r}")
        if nbytes != 4 * math.prod(shape) or offset % ALIGN:
            raise ContainerError(f"tensor {name!r}: inconsistent shape/offset/nbytes")
        if offset + nbytes > len(payload):
            raise ContainerError(
                f"tensor {name!r} truncated: needs bytes {offset}..{offset + nbytes}, payload has {len(payload)}"
            )
        tensors[name] = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        end = max(end, offset + nbytes)
    if end != len(payload):
        raise ContainerError(f"payload length {len(payload)} does not match declared tensors ({end} bytes)")
    return tensors, metadata


def write(path: str | Path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(to_bytes(tensors, metadata))


def read(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return from_bytes(Path(path).read_bytes())
