"""Little-endian binary primitives shared by the dataset, checkpoint, and
couplings codecs, plus atomic file writing and content hashing."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO

import numpy as np


class FormatError(Exception):
    """File bytes do not parse as the expected format."""


class VersionError(FormatError):
    """File was written by a newer format revision than this build reads."""


def read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} more bytes, found {len(data)}")
    return data


def expect_magic(f: BinaryIO, magic: bytes) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic bytes {got!r}, expected {magic!r}")


def read_version(f: BinaryIO, current: int) -> int:
    version = read_u32(f)
    if version > current:
        raise VersionError(f"file format version {version} is newer than supported {current}")
    return version


def write_u8(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<B", v))


def write_u32(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<I", v))


def write_u64(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<Q", v))


def write_f64(f: BinaryIO, v: float) -> None:
    f.write(struct.pack("<d", v))


def read_u8(f: BinaryIO) -> int:
    return struct.unpack("<B", read_exact(f, 1))[0]


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def read_u64(f: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(f, 8))[0]


def read_f64(f: BinaryIO) -> float:
    return struct.unpack("<d", read_exact(f, 8))[0]


def write_mat(f: BinaryIO, m: np.ndarray) -> None:
    """u32 rows, u32 cols, then row-major little-endian float64 payload."""
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"write_mat: expected a 2-D matrix, got shape {m.shape}")
    write_u32(f, m.shape[0])
    write_u32(f, m.shape[1])
    f.write(m.tobytes())


def read_mat(f: BinaryIO) -> np.ndarray:
    rows = read_u32(f)
    cols = read_u32(f)
    data = read_exact(f, rows * cols * 8)
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_str(f: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    write_u32(f, len(raw))
    f.write(raw)


def read_str(f: BinaryIO) -> str:
    n = read_u32(f)
    return read_exact(f, n).decode("utf-8")


def write_file_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
