"""Binary tensor container used for parameter and optimizer checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"UDASEGCK"
    version      u32       1
    meta_len     u32       length of the UTF-8 JSON metadata blob
    meta         bytes     JSON object, keys sorted
    n_tensors    u32
    per tensor:
        name_len u16, name (UTF-8)
        dtype    u8        0 = float32, 1 = float64, 2 = int64
        ndim     u8, dims u32 * ndim
        data     raw little-endian IEEE-754 / two's complement, C order

Writing the same tensors and metadata always yields the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError

MAGIC = b"UDASEGCK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def save(path, tensors: dict, meta: dict | None = None) -> None:
    path = Path(path)
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"checkpoint: unsupported dtype {arr.dtype} for tensor {name!r}")
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)`` from a container file."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read checkpoint ({exc})") from exc
    if buf[:8] != MAGIC:
        raise IngestionError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 8)
        if version != VERSION:
            raise IngestionError(f"{path}: unsupported checkpoint version {version}")
        off = 16
        meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off)
            tensors[name] = arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
            off += nbytes
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: corrupt checkpoint ({exc})") from exc
    return tensors, meta


def prefixed(params: dict, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in params.items()}


def unprefixed(tensors: dict, prefix: str) -> dict:
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
