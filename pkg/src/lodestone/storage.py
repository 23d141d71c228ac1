"""Shared on-disk plumbing for the binary index formats.

Both index files follow the same envelope: 4-byte magic, u16 version, a body
of length-prefixed little-endian sections, and a trailing CRC32 over
everything before it. Posting ordinals are delta-encoded; small integers use
LEB128 varints. Writes go through a temp file + rename so interrupted runs
never leave a half-written index behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from contextlib import contextmanager
from typing import BinaryIO, Iterator

import numpy as np


class StorageError(Exception):
    """Base class for index file problems."""


class WrongFormatError(StorageError):
    """File exists but its magic bytes name a different format."""


class VersionError(StorageError):
    """Recognized format, unsupported version."""


class TruncatedError(StorageError):
    """File ends before the declared payload does."""


class ChecksumError(StorageError):
    """Trailing CRC32 does not match the bytes read."""


@contextmanager
def atomic_write(path: str | os.PathLike) -> Iterator[BinaryIO]:
    """Write to a temp file in the target directory, rename into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class ChecksumWriter:
    """File wrapper that maintains a running CRC32 of everything written."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self.crc = 0

    def write(self, data: bytes) -> None:
        self.crc = zlib.crc32(data, self.crc)
        self._fh.write(data)

    def write_u8(self, v: int) -> None:
        self.write(struct.pack("<B", v))

    def write_u16(self, v: int) -> None:
        self.write(struct.pack("<H", v))

    def write_u32(self, v: int) -> None:
        self.write(struct.pack("<I", v))

    def write_u64(self, v: int) -> None:
        self.write(struct.pack("<Q", v))

    def write_f64(self, v: float) -> None:
        self.write(struct.pack("<d", v))

    def write_varint(self, v: int) -> None:
        if v < 0:
            raise ValueError("varints are unsigned")
        out = bytearray()
        while True:
            byte = v & 0x7F
            v >>= 7
            if v:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
        self.write(bytes(out))

    def write_str(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.write_varint(len(raw))
        self.write(raw)

    def write_array(self, arr: np.ndarray) -> None:
        """Raw little-endian dump, length-prefixed in bytes."""
        data = np.ascontiguousarray(arr)
        if data.dtype.byteorder == ">":
            data = data.astype(data.dtype.newbyteorder("<"))
        raw = data.tobytes()
        self.write_varint(len(raw))
        self.write(raw)

    def finish(self) -> None:
        """Append the trailing CRC32 (not itself checksummed)."""
        self._fh.write(struct.pack("<I", self.crc))


class ChecksumReader:
    """Buffered reader mirroring ChecksumWriter; raises TruncatedError on short reads."""

    def __init__(self, fh: BinaryIO, what: str = "index"):
        # Slurp once: index files are loaded whole anyway and it makes
        # checksum verification O(1) bookkeeping.
        self._buf = fh.read()
        self._pos = 0
        self._what = what
        if len(self._buf) < 4:
            raise TruncatedError(f"truncated {what}: file shorter than its checksum")
        self._end = len(self._buf) - 4

    def read(self, n: int) -> bytes:
        if self._pos + n > self._end:
            raise TruncatedError(f"truncated {self._what}: wanted {n} bytes at offset {self._pos}")
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def read_u8(self) -> int:
        return struct.unpack("<B", self.read(1))[0]

    def read_u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def read_u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def read_u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def read_f64(self) -> float:
        return struct.unpack("<d", self.read(8))[0]

    def read_varint(self) -> int:
        shift = 0
        value = 0
        while True:
            byte = self.read(1)[0]
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise StorageError(f"malformed varint in {self._what}")

    def read_str(self) -> str:
        n = self.read_varint()
        return self.read(n).decode("utf-8")

    def read_array(self, dtype: str) -> np.ndarray:
        n = self.read_varint()
        return np.frombuffer(self.read(n), dtype=np.dtype(dtype).newbyteorder("<")).copy()

    def verify_checksum(self) -> None:
        """Call after the body is fully consumed."""
        if self._pos != self._end:
            raise StorageError(
                f"malformed {self._what}: {self._end - self._pos} unread bytes before checksum"
            )
        stored = struct.unpack("<I", self._buf[self._end :])[0]
        actual = zlib.crc32(self._buf[: self._end])
        if stored != actual:
            raise ChecksumError(f"{self._what} checksum mismatch: file is corrupt")


def check_magic(reader: ChecksumReader, expected: bytes, what: str) -> None:
    got = reader.read(len(expected))
    if got != expected:
        raise WrongFormatError(f"not a {what}: bad magic {got!r}")


def check_version(reader: ChecksumReader, supported: int, what: str) -> None:
    version = reader.read_u16()
    if version != supported:
        raise VersionError(f"unsupported {what} version {version} (supported: {supported})")


def delta_encode(ordinals: np.ndarray) -> np.ndarray:
    out = np.asarray(ordinals, dtype=np.int64).copy()
    out[1:] = np.diff(out)
    return out


def delta_decode(deltas: np.ndarray) -> np.ndarray:
    return np.cumsum(np.asarray(deltas, dtype=np.int64))
