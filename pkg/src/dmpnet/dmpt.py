"""The DMPT binary tensor format and the named-tensor checkpoint container.

Tensor record::

    b"DMPT" | u8 version=1 | u8 ndim | ndim x u32 LE extents | float32 LE payload

Checkpoint container::

    b"DMPC" | u8 version=1 | u32 LE count |
    count x ( u16 LE name length | UTF-8 name | tensor record )
"""

from __future__ import annotations

import os
import struct
from typing import Iterable, Mapping, Union

import numpy as np

MAGIC = b"DMPT"
CONTAINER_MAGIC = b"DMPC"
VERSION = 1
_F32 = np.dtype("<f4")


class DmptError(ValueError):
    pass


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise DmptError(f"too many dimensions: {arr.ndim}")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_F32).tobytes()


def decode_tensor(buf: bytes, offset: int = 0):
    """Decode one tensor record starting at ``offset``; returns ``(array, end_offset)``."""
    if buf[offset : offset + 4] != MAGIC:
        raise DmptError("corrupt magic: not a DMPT tensor record")
    if len(buf) < offset + 6:
        raise DmptError("truncated tensor header")
    version, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if version != VERSION:
        raise DmptError(f"unsupported DMPT version {version}")
    pos = offset + 6
    if len(buf) < pos + 4 * ndim:
        raise DmptError("truncated tensor extents")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    nbytes = 4 * int(np.prod(shape, dtype=np.int64))
    if len(buf) < pos + nbytes:
        raise DmptError(f"truncated tensor payload: need {nbytes} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=_F32, count=nbytes // 4, offset=pos).reshape(shape)
    return arr.astype(np.float32), pos + nbytes


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_tensor(path, arr: np.ndarray) -> None:
    _atomic_write(path, encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise DmptError(f"{len(buf) - end} trailing bytes after tensor")
    return arr


def encode_checkpoint(entries: Union[Mapping[str, np.ndarray], Iterable]) -> bytes:
    items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    seen = set()
    parts = [CONTAINER_MAGIC, struct.pack("<BI", VERSION, len(items))]
    for name, arr in items:
        if name in seen:
            raise DmptError(f"name collision: {name!r} appears twice")
        seen.add(name)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DmptError(f"name too long: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(encode_tensor(np.asarray(getattr(arr, "data", arr))))
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict:
    if buf[:4] != CONTAINER_MAGIC:
        raise DmptError("corrupt magic: not a DMPC checkpoint")
    if len(buf) < 9:
        raise DmptError("truncated checkpoint header")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise DmptError(f"unsupported checkpoint version {version}")
    pos = 9
    out: dict = {}
    for _ in range(count):
        if len(buf) < pos + 2:
            raise DmptError("truncated checkpoint entry")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + nlen:
            raise DmptError("truncated checkpoint entry name")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        if name in out:
            raise DmptError(f"name collision: {name!r} appears twice")
        out[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise DmptError(f"{len(buf) - pos} trailing bytes after checkpoint")
    return out


def save_checkpoint(path, entries) -> None:
    _atomic_write(path, encode_checkpoint(entries))


def load_checkpoint(path) -> dict:
    """Read every named tensor; nothing is returned unless the whole file parses."""
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def assign(params, named: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into ``params`` (a NetworkParams) after validating names and shapes."""
    unknown = sorted(set(named) - set(params.names()))
    if unknown:
        raise DmptError(f"unknown parameter names: {', '.join(unknown)}")
    missing = sorted(set(params.names()) - set(named))
    if missing:
        raise DmptError(f"missing parameter names: {', '.join(missing)}")
    for name, arr in named.items():
        if params[name].shape != arr.shape:
            raise DmptError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {params[name].shape}")
    for name, arr in named.items():
        t = params[name]
        t.data = np.array(arr, dtype=t.dtype)
