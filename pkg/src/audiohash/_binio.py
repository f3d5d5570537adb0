"""Little-endian binary helpers shared by the archive, checkpoint and index formats."""

import hashlib
import struct

import numpy as np


class FormatError(ValueError):
    """A file does not match its declared binary format."""


class ChecksumError(FormatError):
    pass


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class Writer:
    def __init__(self):
        self.buf = bytearray()

    def raw(self, b: bytes):
        self.buf += b

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def u64(self, v: int):
        self.buf += struct.pack("<Q", v)

    def str16(self, s: str):
        b = s.encode("utf-8")
        if len(b) > 0xFFFF:
            raise ValueError("string too long for a u16 length prefix")
        self.buf += struct.pack("<H", len(b)) + b

    def str32(self, s: str):
        b = s.encode("utf-8")
        self.buf += struct.pack("<I", len(b)) + b

    def array(self, a: np.ndarray, dtype: str):
        self.buf += np.ascontiguousarray(a, dtype=dtype).tobytes()

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class Reader:
    def __init__(self, data: bytes, what: str = "file"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} at byte {self.pos}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def str16(self) -> str:
        return self._decode(self.take(self.u16()))

    def str32(self) -> str:
        return self._decode(self.take(self.u32()))

    def array(self, count: int, dtype: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).copy()

    def _decode(self, b: bytes) -> str:
        try:
            return b.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"invalid UTF-8 in {self.what}") from e

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"bad magic for {self.what}: {got!r}")

    def expect_version(self, supported: int) -> int:
        v = self.u32()
        if v == 0 or v > supported:
            raise FormatError(f"unsupported {self.what} version {v} (this build reads <= {supported})")
        return v

    def at_end(self) -> bool:
        return self.pos == len(self.data)
