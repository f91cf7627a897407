"""Binary containers: named-tensor files, checkpoints and embedding sets.

Named-tensor container (little-endian)::

    magic     4 bytes  b"TNS1"
    header    u32 length + UTF-8 text (free-form, e.g. a config echo)
    count     u32
    per tensor:
        name  u16 length + UTF-8
        ndim  u8, then ndim x u32 dims
        data  prod(dims) x float32, row-major

A checkpoint is the same layout with magic b"CKP1" followed by an RNG
trailer: u64 seed, u64 counter, u64 training step.

Embedding set: b"EMB1", u32 N, u32 d, u8 role, then N*d float32 row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"TNS1"
CHECKPOINT_MAGIC = b"CKP1"
EMBEDDING_MAGIC = b"EMB1"
ROLES = {"video": 0, "audio": 1, "text": 2, "frame": 3}
ROLE_NAMES = {v: k for k, v in ROLES.items()}


class ContainerError(ValueError):
    pass


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ContainerError("unexpected end of file")
    return data


def _write_tensors(fh: BinaryIO, header: str, tensors: dict[str, np.ndarray]) -> None:
    text = header.encode("utf-8")
    fh.write(struct.pack("<I", len(text)))
    fh.write(text)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_tensors(fh: BinaryIO) -> tuple[str, dict[str, np.ndarray]]:
    (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
    header = _read_exact(fh, hlen).decode("utf-8")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32)
    return header, tensors


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], header: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        _write_tensors(fh, header, tensors)


def load_tensors(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != TENSOR_MAGIC:
            raise ContainerError(f"{path}: not a tensor container")
        out = _read_tensors(fh)
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes")
    return out


@dataclass
class Checkpoint:
    config_text: str
    weights: dict[str, np.ndarray]
    seed: int
    counter: int
    step: int


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        _write_tensors(fh, ckpt.config_text, ckpt.weights)
        fh.write(struct.pack("<QQQ", ckpt.seed, ckpt.counter, ckpt.step))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise ContainerError(f"{path}: not a checkpoint")
        header, weights = _read_tensors(fh)
        seed, counter, step = struct.unpack("<QQQ", _read_exact(fh, 24))
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes")
    return Checkpoint(header, weights, seed, counter, step)


def save_embeddings(path: str | Path, rows: np.ndarray, role: str) -> None:
    rows = np.ascontiguousarray(np.atleast_2d(rows), dtype="<f4")
    if role not in ROLES:
        raise ContainerError(f"unknown role {role!r}")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<IIB", rows.shape[0], rows.shape[1], ROLES[role]))
        fh.write(rows.tobytes())


def load_embeddings(path: str | Path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != EMBEDDING_MAGIC:
            raise ContainerError(f"{path}: not an embedding file")
        n, d, role = struct.unpack("<IIB", _read_exact(fh, 9))
        if role not in ROLE_NAMES:
            raise ContainerError(f"{path}: unknown role tag {role}")
        rows = np.frombuffer(_read_exact(fh, 4 * n * d), dtype="<f4").reshape(n, d)
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes")
    return rows.astype(np.float32), ROLE_NAMES[role]
