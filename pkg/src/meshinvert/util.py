"""Shared plumbing: seed derivation, atomic file writes, binary array framing.

Every random draw in the package flows from a single master seed through
``derive_seed(master, tag)``, where the tag is a stable human-readable path
like ``"dataset/mesh/3"``.  Identical (seed, tag) pairs give identical
streams on every platform, which is what makes whole-pipeline reruns
byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from contextlib import contextmanager

import numpy as np

FORMAT_VERSION = 1

MAGIC_MESH = b"MMSH"
MAGIC_SAMPLE = b"MINV"
MAGIC_TRAJECTORY = b"MTRJ"
MAGIC_GNN = b"MGNN"
MAGIC_PRIOR = b"MPRI"
MAGIC_SOLUTION = b"MSOL"


class ArtifactFormatError(ValueError):
    """Raised when an artifact file has the wrong magic or version."""


def derive_seed(master: int, tag: str) -> int:
    """Derive a child seed from the master seed and a component tag.

    Uses SHA-256 over ``"{master}|{tag}"`` and keeps the low 8 bytes, so the
    mapping is stable across runs, platforms and Python versions.
    """
    digest = hashlib.sha256(f"{master}|{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, tag))


@contextmanager
def atomic_open(path: str | os.PathLike, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename into place.

    Readers never observe a partially written artifact; a crash leaves the
    original file (if any) untouched.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    with atomic_open(path, "wb") as f:
        f.write(data)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    with atomic_open(path, "w") as f:
        f.write(text)


def write_magic(f, magic: bytes, version: int = FORMAT_VERSION) -> None:
    f.write(struct.pack("<4sI", magic, version))


def read_magic(f, magic: bytes) -> int:
    head = f.read(8)
    if len(head) != 8:
        raise ArtifactFormatError("truncated header")
    got, version = struct.unpack("<4sI", head)
    if got != magic:
        raise ArtifactFormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise ArtifactFormatError(
            f"unsupported version {version}, expected {FORMAT_VERSION}"
        )
    return version


def write_array(f, arr: np.ndarray) -> None:
    """Self-describing little-endian float64/int64 array record."""
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8", copy=False)
        kind = 0
    elif arr.dtype.kind in "iu":
        arr = arr.astype("<i8", copy=False)
        kind = 1
    else:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    f.write(struct.pack("<BB", kind, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    f.write(np.ascontiguousarray(arr).tobytes())


def read_array(f) -> np.ndarray:
    head = f.read(2)
    if len(head) != 2:
        raise ArtifactFormatError("truncated array record")
    kind, ndim = struct.unpack("<BB", head)
    shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim)) if ndim else ()
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    dtype = "<f8" if kind == 0 else "<i8"
    data = np.frombuffer(f.read(8 * count), dtype=dtype, count=count)
    out = data.reshape(shape).copy()
    if kind == 1:
        out = out.astype(np.int64)
    return out


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
