"""Minimal PGM (P2 plain / P5 raw, 8 or 16 bit) reader and writer.

Pixel values are mapped linearly between ``[0, maxval]`` and ``[0, 1]``.
"""

from __future__ import annotations

import re

import numpy as np


class PGMError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic number {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise PGMError(f"invalid maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        nbytes = w * h * dtype.itemsize
        if len(data) - pos < nbytes:
            raise PGMError("truncated raster")
        img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    else:
        vals = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(vals) < w * h:
            raise PGMError("truncated raster")
        img = np.array([int(v) for v in vals[: w * h]])
    return img.reshape(h, w).astype(float) / maxval


def write_pgm(path, u, bits: int = 8, plain: bool = False) -> None:
    """Write ``u`` (clipped to ``[0, 1]``) as an 8- or 16-bit PGM."""
    if bits not in (8, 16):
        raise PGMError("bits must be 8 or 16")
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise PGMError("expected a 2-D image")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(u, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"{'P2' if plain else 'P5'}\n{w} {h}\n{maxval}\n".encode())
        if plain:
            for row in q:
                fh.write((" ".join(map(str, row)) + "\n").encode())
        else:
            fh.write(q.astype(">u2" if bits == 16 else "u1").tobytes())
