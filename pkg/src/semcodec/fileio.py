"""Shared binary file plumbing: atomic writes and a bounds-checked reader.

All container formats in this package (SFEA, SCKP, SCTK) are little-endian
and fixed-layout; the reader turns any overrun into a FormatError naming
expected vs actual byte counts instead of raising struct/index errors.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError


def atomic_write_bytes(path, data):
    """Write bytes to path via a temp file + rename in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class ByteReader:
    """Sequential little-endian reader over an in-memory buffer."""

    def __init__(self, data, what="file"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n, field):
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(
                f"truncated {self.what}: {field} needs {n} bytes at offset {self.pos}, "
                f"expected at least {end} bytes total but file has {len(self.data)}"
            )
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def magic(self, expected):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic in {self.what}: expected {expected!r}, got {got!r}")

    def u16(self, field):
        return struct.unpack("<H", self.take(2, field))[0]

    def u32(self, field):
        return struct.unpack("<I", self.take(4, field))[0]

    def u64(self, field):
        return struct.unpack("<Q", self.take(8, field))[0]

    def f32_array(self, count, field):
        raw = self.take(4 * count, field)
        return np.frombuffer(raw, dtype="<f4", count=count)

    def f64_array(self, count, field):
        raw = self.take(8 * count, field)
        return np.frombuffer(raw, dtype="<f8", count=count)

    def u16_array(self, count, field):
        raw = self.take(2 * count, field)
        return np.frombuffer(raw, dtype="<u2", count=count)

    def utf8(self, n, field):
        raw = self.take(n, field)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"invalid UTF-8 in {self.what} {field}: {e}") from None

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.what} has {len(self.data) - self.pos} trailing bytes "
                f"after offset {self.pos}"
            )


def pack_u16(v):
    return struct.pack("<H", v)


def pack_u32(v):
    return struct.pack("<I", v)


def pack_u64(v):
    return struct.pack("<Q", v)
