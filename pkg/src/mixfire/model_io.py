"""Binary model checkpoint format.

Layout, all integers little-endian:

    magic   4 bytes  b"MXF1"
    count   u32      number of parameters
    then per parameter, sorted by name:
        name_len  u16
        name      UTF-8 bytes
        rank      u8
        extents   rank * u32
        data      prod(extents) * float64

Raw float64 bits are written verbatim, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"MXF1"


class ModelFormatError(ValueError):
    """Raised when a checkpoint's bytes do not match the format."""


def _coerce_named(params) -> dict[str, Tensor]:
    named = params.named() if hasattr(params, "named") else dict(params)
    if not named:
        raise ValueError("refusing to save an empty parameter map")
    return named


def save_model(params, path: str) -> None:
    """Write a parameter map (or anything with .named()) to ``path``."""
    named = _coerce_named(params)
    chunks = [MAGIC, struct.pack("<I", len(named))]
    for name in sorted(named):
        tensor = named[name]
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes) -> None:
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise ModelFormatError(f"truncated file: ran out of bytes "
                                   f"reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def load_model(path: str) -> dict[str, Tensor]:
    """Read a checkpoint back into a name -> Tensor map."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError(f"bad magic in {path}: not a model file")
    (count,) = struct.unpack("<I", r.take(4, "count"))
    named: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        if name in named:
            raise ModelFormatError(f"duplicate parameter name {name!r}")
        (rank,) = struct.unpack("<B", r.take(1, "rank"))
        extents = struct.unpack(f"<{rank}I", r.take(4 * rank, "extents"))
        size = 1
        for e in extents:
            if e < 1:
                raise ModelFormatError(f"extent {e} < 1 in {name!r}")
            size *= e
        data = np.frombuffer(r.take(8 * size, f"data of {name!r}"),
                             dtype="<f8").reshape(extents)
        named[name] = Tensor(data.copy(), requires_grad=True)
    if r.pos != len(blob):
        raise ModelFormatError(f"{len(blob) - r.pos} trailing bytes "
                               f"after last parameter")
    return named


def assign_named(params, named: dict[str, Tensor]) -> None:
    """Copy loaded tensors into an existing parameter structure.

    The name sets must match exactly; shapes must agree.
    """
    target = _coerce_named(params)
    missing = sorted(set(target) - set(named))
    extra = sorted(set(named) - set(target))
    if missing or extra:
        raise ModelFormatError(f"parameter names do not match structure "
                               f"(missing {missing[:3]}, extra {extra[:3]})")
    for name, dst in target.items():
        src = named[name]
        if src.shape != dst.shape:
            raise ModelFormatError(f"shape of {name!r} is {src.shape}, "
                                   f"structure expects {dst.shape}")
        dst.data[...] = src.data
