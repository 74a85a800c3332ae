"""Binary value-table files (``HJVT``).

Layout, little-endian::

    magic      4s   b"HJVT"
    version    u16
    dims       u16
    per dim    f64 min, f64 max, u32 count, u8 periodic
    horizon    f64
    precision  u8   (4 or 8 bytes per value)
    payload    row-major float32/float64
    crc32      u32  over header + payload
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .grid import GridSpec, ValueTable

MAGIC = b"HJVT"
VERSION = 1
TABLE_DIR_ENV = "REACHSTACK_TABLE_DIR"


class TableFormatError(ValueError):
    """Raised for truncated, corrupted or otherwise unreadable table files."""


def encode_table(table: ValueTable, precision: int = 8) -> bytes:
    if precision not in (4, 8):
        raise ValueError("precision must be 4 or 8 bytes")
    spec = table.spec
    parts = [MAGIC, struct.pack("<HH", VERSION, spec.dim_count)]
    for lo, hi, n, per in zip(spec.lower, spec.upper, spec.node_counts, spec.periodic):
        parts.append(struct.pack("<ddIB", lo, hi, n, int(per)))
    parts.append(struct.pack("<dB", table.horizon_tau, precision))
    dtype = "<f4" if precision == 4 else "<f8"
    parts.append(np.ascontiguousarray(table.data, dtype=dtype).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_table(blob: bytes) -> ValueTable:
    if len(blob) < 8 + 4 or blob[:4] != MAGIC:
        raise TableFormatError("not a value table file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise TableFormatError("CRC mismatch")
    version, dims = struct.unpack_from("<HH", body, 4)
    if version != VERSION:
        raise TableFormatError(f"unsupported table version {version}")
    offset = 8
    lower, upper, counts, periodic = [], [], [], []
    try:
        for _ in range(dims):
            lo, hi, n, per = struct.unpack_from("<ddIB", body, offset)
            offset += struct.calcsize("<ddIB")
            lower.append(lo), upper.append(hi), counts.append(n), periodic.append(bool(per))
        horizon, precision = struct.unpack_from("<dB", body, offset)
    except struct.error as exc:
        raise TableFormatError("truncated header") from exc
    offset += struct.calcsize("<dB")
    if precision not in (4, 8):
        raise TableFormatError(f"bad precision flag {precision}")
    spec = GridSpec(tuple(lower), tuple(upper), tuple(counts), tuple(periodic))
    expected = spec.size * precision
    if len(body) - offset != expected:
        raise TableFormatError(f"payload has {len(body) - offset} bytes, header implies {expected}")
    data = np.frombuffer(body, dtype="<f4" if precision == 4 else "<f8", offset=offset)
    return ValueTable(spec, data.astype(np.float64), horizon_tau=horizon)


def save_table(table: ValueTable, path, precision: int = 8) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_table(table, precision))
    os.replace(tmp, path)
    return path


def load_table(path) -> ValueTable:
    return decode_table(Path(path).read_bytes())


def default_table_dir() -> Path:
    return Path(os.environ.get(TABLE_DIR_ENV, Path.home() / ".cache" / "reachstack"))
