"""Binary parameter container.

Layout (all integers little-endian)::

    b"OVGT" | u16 version | u32 count |
    count x ( u16 name_len | name (utf-8) | u8 dtype | u8 rank | rank x u32 dim | raw LE values ) |
    u32 crc32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"OVGT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CorruptCheckpointError(ValueError):
    pass


def encode(named: Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = [(name, np.asarray(arr)) for name, arr in named]
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("parameter names must be unique")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(items))]
    for name, arr in items:
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 14:
        raise CorruptCheckpointError("file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError("CRC mismatch")
    if body[:4] != MAGIC:
        raise CorruptCheckpointError(f"bad magic {body[:4]!r}")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            code, rank = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(body):
                raise CorruptCheckpointError(f"{name}: truncated values")
            out[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"malformed record: {exc}") from exc
    if off != len(body):
        raise CorruptCheckpointError("trailing bytes after last record")
    return out


def save_checkpoint(model, path: str | Path) -> Path:
    p = Path(path)
    p.write_bytes(encode((name, param.data) for name, param in model.named_parameters()))
    return p


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
