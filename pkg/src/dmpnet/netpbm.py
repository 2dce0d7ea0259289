"""Binary Netpbm I/O: P5 (grey) and P6 (RGB), maxval 255 only.

Images are exchanged as channel-first float32 arrays in [0, 1]:
``(1, h, w)`` for P5 and ``(3, h, w)`` for P6.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np


class NetpbmError(ValueError):
    pass


def _next_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise NetpbmError("malformed header: unexpected end of data")
    return buf[start:pos], pos


def decode(buf: bytes) -> np.ndarray:
    """Parse a P5/P6 byte string into a (c, h, w) uint8 array."""
    magic, pos = _next_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"malformed header: unsupported magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise NetpbmError(f"malformed header: expected an integer, got {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise NetpbmError(f"malformed header: bad extents {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval} (only 255)")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise NetpbmError("malformed header: missing whitespace before payload")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise NetpbmError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def encode(pixels: np.ndarray, comment: Optional[str] = None) -> bytes:
    """Serialize a (c, h, w) or (h, w) uint8 array; c = 1 gives P5, c = 3 gives P6."""
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise NetpbmError(f"can only write 1 or 3 channels, got {c}")
    head = b"P5\n" if c == 1 else b"P6\n"
    if comment:
        head += b"".join(b"# " + line.encode() + b"\n" for line in comment.splitlines())
    head += f"{w} {h}\n255\n".encode()
    return head + np.ascontiguousarray(pixels.transpose(1, 2, 0), dtype=np.uint8).tobytes()


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 0..255 bytes, rounding half up."""
    v = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = decode(fh.read())
    return (raw.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def save_image(path, values: np.ndarray, comment: Optional[str] = None) -> None:
    data = encode(to_uint8(values), comment)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
