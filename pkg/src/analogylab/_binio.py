"""Little-endian readers/writers for the corpus and checkpoint files."""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagicError, TruncatedFileError, VersionError


class Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.what} truncated: needed {n} bytes at offset {self.pos}, "
                f"{len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count)

    def header(self, magic: bytes, version: int) -> None:
        got = self.take(len(magic))
        if got != magic:
            raise BadMagicError(f"{self.what}: bad magic {got!r}, expected {magic!r}")
        v = self.u32()
        if v != version:
            raise VersionError(f"{self.what}: unsupported version {v} (this build reads {version})")

    def done(self) -> bool:
        return self.pos == len(self.data)


def u32(v: int) -> bytes:
    return struct.pack("<I", v)


def u64(v: int) -> bytes:
    return struct.pack("<Q", v)
