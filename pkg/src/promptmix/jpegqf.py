"""JPEG marker walking, DQT extraction and quality-factor estimation."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DQT = 0xDB
_STANDALONE = {0x01, SOI, EOI} | set(range(0xD0, 0xD8))

# ITU-T T.81 Annex K.1 luminance table, natural (row-major) order.
STD_LUMINANCE = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.int64)

# ZIGZAG[i] is the natural-order position of the i-th coefficient in the stream.
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
], dtype=np.int64)


def is_jpeg(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"\xff\xd8"


def read_quant_tables(data: bytes) -> dict[int, np.ndarray]:
    """Quantization tables keyed by table id, each 64 entries in natural order."""
    if data[:2] != b"\xff\xd8":
        raise FormatError("missing SOI marker")
    tables = {}
    pos = 2
    n = len(data)
    while pos < n:
        if data[pos] != 0xFF:
            raise FormatError(f"expected marker at offset {pos}")
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            break
        marker = data[pos]
        pos += 1
        if marker in _STANDALONE:
            if marker == EOI:
                break
            continue
        if pos + 2 > n:
            raise FormatError("truncated segment length")
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2 or pos + length > n:
            raise FormatError(f"truncated segment 0xFF{marker:02X}")
        body = data[pos + 2:pos + length]
        pos += length
        if marker == DQT:
            tables.update(_parse_dqt(body))
        elif marker == SOS:
            break
    if not tables:
        raise FormatError("no DQT segment found")
    return tables


def _parse_dqt(body: bytes) -> dict[int, np.ndarray]:
    out = {}
    i = 0
    while i < len(body):
        precision, table_id = body[i] >> 4, body[i] & 0x0F
        i += 1
        width = 2 if precision else 1
        if i + 64 * width > len(body):
            raise FormatError("truncated DQT table")
        fmt = ">64H" if precision else "64B"
        zz = np.array(struct.unpack_from(fmt, body, i), dtype=np.int64)
        i += 64 * width
        natural = np.empty(64, dtype=np.int64)
        natural[ZIGZAG] = zz
        out[table_id] = natural
    return out


def reference_table(quality: int, base: np.ndarray = STD_LUMINANCE) -> np.ndarray:
    """Table produced by the standard quality scaling rule (libjpeg-style,
    integer arithmetic, baseline clamp to 255)."""
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((base * scale + 50) // 100, 1, 255)


_REFERENCE = {q: reference_table(q) for q in range(1, 101)}


def estimate_qf_from_table(table: np.ndarray) -> int:
    """argmin over Q of the L1 distance to the reference table; ties go to
    the larger Q."""
    best_q, best_d = None, None
    for q in range(100, 0, -1):
        d = int(np.abs(_REFERENCE[q] - table).sum())
        if best_d is None or d < best_d:
            best_q, best_d = q, d
    return best_q


def estimate_jpeg_qf(jpeg_path) -> int:
    with open(jpeg_path, "rb") as fh:
        data = fh.read()
    tables = read_quant_tables(data)
    luminance = tables[0] if 0 in tables else tables[min(tables)]
    return estimate_qf_from_table(luminance)
