"""Minimal binary PPM (P6, 8-bit) reader and writer."""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError


def _tokens(data: bytes, count: int, pos: int):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        out.append(data[start:pos])
    return out, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an ``(height, width, 3)`` uint8 array."""
    (magic, w, h, maxval), pos = _tokens(data, 4, 0)
    if magic != b"P6":
        raise FormatError(f"not a P6 PPM (magic {magic!r})")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("malformed PPM header") from exc
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    size = width * height * 3
    raster = data[pos : pos + size]
    if len(raster) != size:
        raise FormatError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_ppm(data)
    except FormatError as exc:
        raise FormatError(str(exc), path=path) from None


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must have shape (height, width, 3)")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
