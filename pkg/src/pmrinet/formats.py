"""Shared helpers and error types for the on-disk containers.

Every container in this package (PMRIMASK masks, PMRD datasets, PMNW
model parameters) fails in the same three ways: wrong magic, unsupported
version, short file. The error classes live here so each reader raises
them uniformly and callers can catch the common base.
"""

import struct

import numpy as np


class FileFormatError(Exception):
    """Base class for malformed container files."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """Container version is not supported by this reader."""


class TruncatedFileError(FileFormatError):
    """File ended before the declared payload was fully read."""


def read_exact(f, n: int, what: str) -> bytes:
    """Read exactly n bytes or raise TruncatedFileError naming the field."""
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(data)}")
    return data


def expect_magic(f, magic: bytes, what: str) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise BadMagicError(f"{what}: expected magic {magic!r}, got {got!r}")


def expect_version(f, expected: int, what: str) -> None:
    version = read_u32(f, f"{what} version")
    if version != expected:
        raise VersionMismatchError(
            f"{what}: file version {version}, reader supports {expected}")


def write_u32(f, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f, what: str) -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def write_f64_array(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64_array(f, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape))
    data = read_exact(f, 8 * count, what)
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def write_c64_array(f, arr: np.ndarray) -> None:
    # complex64 stored as interleaved (re, im) float32 pairs, little-endian.
    f.write(np.ascontiguousarray(arr, dtype="<c8").tobytes())


def read_c64_array(f, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape))
    data = read_exact(f, 8 * count, what)
    return np.frombuffer(data, dtype="<c8").reshape(shape).copy()
