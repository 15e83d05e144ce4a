"""Minimal binary PGM (P5) reader and writer.

P5 files carry an ASCII header (magic, width, height, maxval, '#' comments
allowed between tokens) followed by one raw byte per pixel, row-major.
Only maxval 255 is supported.
"""

from __future__ import annotations

import numpy as np


class PgmFormatError(ValueError):
    """Raised when bytes do not parse as a P5 PGM image."""


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """Write a 2-D uint8 array as a binary PGM file."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"PGM pixels must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"PGM pixels must be uint8, got {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _header_tokens(blob: bytes, count: int, path: str) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise PgmFormatError(f"{path}: truncated header")
        c = blob[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(blob) and blob[j:j + 1] not in b" \t\r\n":
                j += 1
            tokens.append(blob[i:j])
            i = j
    if i >= len(blob) or blob[i:i + 1] not in b" \t\r\n":
        raise PgmFormatError(f"{path}: missing separator after header")
    return tokens, i + 1  # single whitespace byte ends the header


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM file into a (H, W) uint8 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a P5 PGM (bad magic)")
    tokens, start = _header_tokens(blob, 4, path)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmFormatError(f"{path}: non-numeric header field") from exc
    if w < 1 or h < 1:
        raise PgmFormatError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise PgmFormatError(f"{path}: only maxval 255 supported, "
                             f"got {maxval}")
    payload = blob[start:]
    if len(payload) != w * h:
        raise PgmFormatError(f"{path}: payload is {len(payload)} bytes, "
                             f"expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
