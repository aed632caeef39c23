"""Flat binary checkpoint: magic, vocabulary, named float64 tensors, CRC32.

Layout (all integers little-endian u32 unless noted):

    magic "EMGNN1" (6 bytes)
    format version
    token count, then per token: byte length + UTF-8 bytes (id order)
    tensor blocks until 4 bytes remain:
        name length, name UTF-8, rank, dims (u32 x rank),
        payload (little-endian float64, row-major)
    CRC32 of all preceding bytes

Saves are atomic (temp file + rename) and byte-deterministic: tensors
are written in sorted name order.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

MAGIC = b"EMGNN1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(v: int) -> bytes:
    return struct.pack("<I", v)


def serialize(vocab_tokens: list[str], tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _u32(FORMAT_VERSION), _u32(len(vocab_tokens))]
    for tok in vocab_tokens:
        raw = tok.encode("utf-8")
        parts.append(_u32(len(raw)))
        parts.append(raw)
    for name in sorted(tensors):
        # note: np.ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(tensors[name], dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr).reshape(arr.shape)
        raw = name.encode("utf-8")
        parts.append(_u32(len(raw)))
        parts.append(raw)
        parts.append(_u32(arr.ndim))
        for d in arr.shape:
            parts.append(_u32(d))
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


def deserialize(blob: bytes) -> tuple[list[str], dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CheckpointError("checkpoint CRC mismatch")
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise CheckpointError("checkpoint truncated")
        chunk = body[off:off + n]
        off += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic")
    version = u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    tokens = []
    for _ in range(u32()):
        tokens.append(take(u32()).decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    while off < len(body):
        name = take(u32()).decode("utf-8")
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        payload = take(count * 8)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return tokens, tensors


def atomic_write_bytes(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str, vocab_tokens: list[str], tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, serialize(vocab_tokens, tensors))


def load(path: str) -> tuple[list[str], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return deserialize(f.read())
