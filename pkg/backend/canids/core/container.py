"""Self-describing artifact container shared by float and quantized models.

Layout (all integers little-endian)::

    magic line           e.g. b"CANIDS-MODEL\\n"
    version line         b"1\\n"
    u32 header length, UTF-8 JSON header
    u32 blob count
    per blob: u16 name length, name, u8 dtype code, u8 ndim, u32 dims..., raw data
"""

from __future__ import annotations

import struct
from typing import Dict, List, Tuple

import numpy as np

from .errors import ModelFormatError

CONTAINER_VERSION = 1

_DTYPES = {b"f": np.dtype("<f4"), b"b": np.dtype("i1"), b"i": np.dtype("<i4")}


def pack(magic: bytes, header_json: str, blobs: List[Tuple[str, np.ndarray]]) -> bytes:
    out = [magic + b"\n", f"{CONTAINER_VERSION}\n".encode()]
    header = header_json.encode("utf-8")
    out.append(struct.pack("<I", len(header)))
    out.append(header)
    out.append(struct.pack("<I", len(blobs)))
    for name, array in blobs:
        if array.dtype.kind == "f":
            code, array = b"f", array.astype("<f4")
        elif array.dtype == np.int8:
            code = b"b"
        elif array.dtype.kind == "i":
            code, array = b"i", array.astype("<i4")
        else:
            raise ModelFormatError(f"blob {name} has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(code)
        out.append(struct.pack("<B", array.ndim))
        out.append(struct.pack(f"<{array.ndim}I", *array.shape))
        out.append(np.ascontiguousarray(array).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def line(self) -> bytes:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise ModelFormatError("missing header line")
        chunk = self.data[self.pos : end]
        self.pos = end + 1
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def unpack(magic: bytes, data: bytes) -> Tuple[str, Dict[str, np.ndarray]]:
    reader = _Reader(data)
    found = reader.line()
    if found != magic:
        raise ModelFormatError(f"expected magic {magic!r}, found {found[:32]!r}")
    try:
        version = int(reader.line())
    except ValueError:
        raise ModelFormatError("bad container version line") from None
    if version != CONTAINER_VERSION:
        raise ModelFormatError(f"unsupported container version {version}")
    (header_len,) = reader.unpack("<I")
    header = reader.take(header_len).decode("utf-8")
    (count,) = reader.unpack("<I")
    blobs: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code = reader.take(1)
        if code not in _DTYPES:
            raise ModelFormatError(f"blob {name} has unknown dtype code {code!r}")
        dtype = _DTYPES[code]
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        blobs[name] = np.frombuffer(reader.take(size), dtype=dtype).reshape(dims).copy()
    if reader.pos != len(data):
        raise ModelFormatError("trailing bytes after last blob")
    return header, blobs


def expect_blob(blobs: Dict[str, np.ndarray], name: str, shape: Tuple[int, ...]) -> np.ndarray:
    if name not in blobs:
        raise ModelFormatError(f"missing parameter blob {name}")
    if tuple(blobs[name].shape) != tuple(shape):
        raise ModelFormatError(f"blob {name} has dims {blobs[name].shape}, architecture expects {tuple(shape)}")
    return blobs[name]
