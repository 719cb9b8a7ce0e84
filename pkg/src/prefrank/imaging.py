"""Grayscale image serialization: 8-bit PNG plus PGM (P5) fallback.

The PNG encoder is self-contained (zlib + fixed chunk layout) so that
identical pixel data always yields identical bytes; no image library is
required at runtime.
"""

from __future__ import annotations

import binascii
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import InvalidImage


def to_uint8(img) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 with round-half-even."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidImage(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidImage("image contains non-finite values")
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = binascii.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png(img_u8: np.ndarray) -> bytes:
    """Encode a (H, W) uint8 array as an 8-bit grayscale PNG."""
    if img_u8.dtype != np.uint8 or img_u8.ndim != 2:
        raise InvalidImage("encode_png expects a 2-D uint8 array")
    height, width = img_u8.shape
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + row.tobytes() for row in np.ascontiguousarray(img_u8))
    idat = zlib.compress(raw, 9)
    return b"".join([
        b"\x89PNG\r\n\x1a\n",
        _chunk(b"IHDR", ihdr),
        _chunk(b"IDAT", idat),
        _chunk(b"IEND", b""),
    ])


def encode_pgm(img_u8: np.ndarray) -> bytes:
    """Encode a (H, W) uint8 array as binary PGM (P5)."""
    if img_u8.dtype != np.uint8 or img_u8.ndim != 2:
        raise InvalidImage("encode_pgm expects a 2-D uint8 array")
    height, width = img_u8.shape
    header = f"P5\n{width} {height}\n255\n".encode()
    return header + np.ascontiguousarray(img_u8).tobytes()


def write_image(path, img) -> bytes:
    """Write a float image to `path` as PNG or PGM (by suffix); returns the bytes."""
    path = Path(path)
    u8 = to_uint8(img)
    if path.suffix.lower() == ".pgm":
        data = encode_pgm(u8)
    else:
        data = encode_png(u8)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return data
