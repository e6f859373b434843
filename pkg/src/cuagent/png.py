"""Minimal deterministic PNG encoding for palette rasters, plus header inspection."""

from __future__ import annotations

import struct
import zlib

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, data: bytes) -> bytes:
    crc = zlib.crc32(kind + data) & 0xFFFFFFFF
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", crc)


def encode_indexed(pixels: np.ndarray, palette: np.ndarray, level: int = 1) -> bytes:
    """Encode an HxW uint8 index raster with an Nx3 uint8 palette as an 8-bit palette PNG.

    Output bytes depend only on the inputs (no timestamps, no library-version chunks).
    """
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("pixels must be a 2-D uint8 array")
    height, width = pixels.shape
    pal = np.asarray(palette, dtype=np.uint8)
    if pal.ndim != 2 or pal.shape[1] != 3 or not 1 <= len(pal) <= 256:
        raise ValueError("palette must be Nx3 with 1..256 entries")
    raw = np.zeros((height, width + 1), dtype=np.uint8)  # filter byte 0 per row
    raw[:, 1:] = pixels
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 3, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"PLTE", pal.tobytes())
        + _chunk(b"IDAT", zlib.compress(raw.tobytes(), level))
        + _chunk(b"IEND", b"")
    )


def png_dimensions(data: bytes) -> tuple[int, int]:
    """Return (width, height) from a PNG's IHDR chunk; ValueError if not a PNG."""
    if len(data) < 24 or not data.startswith(PNG_SIGNATURE) or data[12:16] != b"IHDR":
        raise ValueError("not a PNG image")
    width, height = struct.unpack(">II", data[16:24])
    return width, height


def solid_png(width: int, height: int, rgb: tuple[int, int, int] = (128, 128, 128)) -> bytes:
    return encode_indexed(np.zeros((height, width), dtype=np.uint8), np.array([rgb], dtype=np.uint8))
