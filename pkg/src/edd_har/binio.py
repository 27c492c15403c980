"""Self-describing binary container used for dataset caches and checkpoints.

Layout::

    8 bytes   magic  b"EDDHAR\\x00\\x1a"
    uint32    format version (little-endian)
    uint32    kind tag length, then the tag bytes (e.g. b"dataset")
    uint64    JSON header length, then the UTF-8 JSON header
    payload   arrays back to back as little-endian float64

The header lists every array's name and shape in payload order plus an
arbitrary ``meta`` object.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"EDDHAR\x00\x1a"
VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    tag = kind.encode()
    return b"".join([
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(tag)), tag,
        struct.pack("<Q", len(header)), header,
        *chunks,
    ])


def decode(blob: bytes, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise ContainerError("not an edd_har container (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (tag_len,) = struct.unpack_from("<I", blob, 12)
    tag = blob[16:16 + tag_len].decode()
    if kind is not None and tag != kind:
        raise ContainerError(f"expected a {kind!r} container, found {tag!r}")
    pos = 16 + tag_len
    (hlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode())
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if pos + nbytes > len(blob):
            raise ContainerError(f"truncated payload in array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise ContainerError("trailing bytes after payload")
    return arrays, header["meta"]


def write_container(path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write_bytes(path, encode(kind, arrays, meta))


def read_container(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes(), kind)
