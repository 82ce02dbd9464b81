"""Binary tensor containers.

Layout (all integers little-endian)::

    b"MTSC1"  u32 count
    count x { u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f64 payload }
    [ b"QSEC"  u32 count
      count x { u32 name_len, name, u8 bits, f64 scale, u32 n, mask bitmap ceil(n/8) } ]

The optional ``QSEC`` trailer carries per-tensor quantization metadata for
compressed checkpoints; plain checkpoints end after the tensor directory.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

MAGIC = b"MTSC1"
QSEC = b"QSEC"


class FormatError(ValueError):
    pass


@dataclass
class QuantSection:
    bits: int
    scale: float
    mask: np.ndarray  # bool, flat, True = kept


def _write_name(buf: BinaryIO, name: str):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_exact(buf: BinaryIO, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise FormatError("truncated container")
    return raw


def _read_name(buf: BinaryIO) -> str:
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    return _read_exact(buf, n).decode("utf-8")


def encode_tensors(
    tensors: dict[str, np.ndarray], quant: dict[str, QuantSection] | None = None
) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        _write_name(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    if quant:
        buf.write(QSEC)
        buf.write(struct.pack("<I", len(quant)))
        for name, q in quant.items():
            _write_name(buf, name)
            mask = np.asarray(q.mask, dtype=bool).reshape(-1)
            buf.write(struct.pack("<BdI", q.bits, q.scale, mask.size))
            buf.write(np.packbits(mask, bitorder="little").tobytes())
    return buf.getvalue()


def decode_tensors(raw: bytes) -> tuple[dict[str, np.ndarray], dict[str, QuantSection]]:
    buf = io.BytesIO(raw)
    if _read_exact(buf, len(MAGIC)) != MAGIC:
        raise FormatError("bad magic, not an MTSC1 container")
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = _read_name(buf)
        (rank,) = struct.unpack("<I", _read_exact(buf, 4))
        dims = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(_read_exact(buf, 8 * n), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(dims)
    quant: dict[str, QuantSection] = {}
    tag = buf.read(len(QSEC))
    if tag == QSEC:
        (qcount,) = struct.unpack("<I", _read_exact(buf, 4))
        for _ in range(qcount):
            name = _read_name(buf)
            bits, scale, n = struct.unpack("<BdI", _read_exact(buf, 13))
            packed = np.frombuffer(_read_exact(buf, (n + 7) // 8), dtype=np.uint8)
            mask = np.unpackbits(packed, bitorder="little")[:n].astype(bool)
            quant[name] = QuantSection(bits, scale, mask)
    elif tag:
        raise FormatError("trailing bytes after tensor directory")
    return tensors, quant


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray], quant=None):
    with open(path, "wb") as fh:
        fh.write(encode_tensors(tensors, quant))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        tensors, _ = decode_tensors(fh.read())
    return tensors


def load_compressed(path: str | os.PathLike):
    with open(path, "rb") as fh:
        return decode_tensors(fh.read())


def checkpoint_digest(tensors: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(encode_tensors(tensors)).hexdigest()
