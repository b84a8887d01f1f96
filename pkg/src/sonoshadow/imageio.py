"""Bit-exact 8-bit grayscale image I/O (PNG and binary PGM).

The PNG codec is self-contained on top of zlib: good enough for the fixed
subset this package emits (8-bit gray, no interlace, filter 0 rows) while
the reader additionally understands all five scanline filters so externally
produced grayscale files load too. Color input is rejected; a small RGB
*writer* exists solely for evaluation overlays.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor

__all__ = ["ImageFormatError", "GrayImage", "load", "save", "save_rgb"]

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


class ImageFormatError(ValueError):
    """Raised for files this codec cannot or will not decode."""


@dataclass
class GrayImage:
    """Row-major 8-bit grayscale raster."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ImageFormatError(
                f"pixel count {len(self.pixels)} != {self.width}x{self.height}"
            )

    def to_unit_array(self) -> np.ndarray:
        arr = np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)
        return arr.astype(np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# PNG


def _png_chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def _encode_png(raster: np.ndarray, color: bool) -> bytes:
    height, width = raster.shape[:2]
    header = struct.pack(">IIBBBBB", width, height, 8, 2 if color else 0, 0, 0, 0)
    rows = raster.reshape(height, -1)
    raw = b"".join(b"\x00" + rows[r].tobytes() for r in range(height))
    return (
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", header)
        + _png_chunk(b"IDAT", zlib.compress(raw, _ZLIB_LEVEL))
        + _png_chunk(b"IEND", b"")
    )


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, width: int, height: int) -> bytes:
    row_len = width
    out = bytearray(width * height)
    prev = bytearray(width)
    pos = 0
    for r in range(height):
        if pos + 1 + row_len > len(raw):
            raise ImageFormatError("PNG pixel data truncated")
        ftype = raw[pos]
        row = bytearray(raw[pos + 1 : pos + 1 + row_len])
        pos += 1 + row_len
        if ftype == 1:  # Sub
            for i in range(1, row_len):
                row[i] = (row[i] + row[i - 1]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(row_len):
                row[i] = (row[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(row_len):
                left = row[i - 1] if i else 0
                row[i] = (row[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(row_len):
                left = row[i - 1] if i else 0
                upleft = prev[i - 1] if i else 0
                row[i] = (row[i] + _paeth(left, prev[i], upleft)) & 0xFF
        elif ftype != 0:
            raise ImageFormatError(f"unknown PNG filter type {ftype}")
        out[r * row_len : (r + 1) * row_len] = row
        prev = row
    return bytes(out)


def _decode_png(blob: bytes) -> GrayImage:
    if not blob.startswith(_PNG_SIGNATURE):
        raise ImageFormatError("not a PNG file")
    pos = len(_PNG_SIGNATURE)
    width = height = None
    idat = bytearray()
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise ImageFormatError("truncated PNG chunk header")
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        kind = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if len(payload) != length or pos + 12 + length > len(blob):
            raise ImageFormatError("truncated PNG chunk")
        (crc,) = struct.unpack(">I", blob[pos + 8 + length : pos + 12 + length])
        if crc != (zlib.crc32(kind + payload) & 0xFFFFFFFF):
            raise ImageFormatError(f"bad CRC in {kind.decode('latin1')} chunk")
        pos += 12 + length
        if kind == b"IHDR":
            width, height, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if depth != 8:
                raise ImageFormatError(f"unsupported PNG bit depth {depth}")
            if color != 0:
                raise ImageFormatError(f"only grayscale PNGs are supported (color type {color})")
            if comp or filt or interlace:
                raise ImageFormatError("unsupported PNG compression/filter/interlace mode")
        elif kind == b"IDAT":
            idat.extend(payload)
        elif kind == b"IEND":
            break
    if width is None:
        raise ImageFormatError("PNG has no IHDR chunk")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt PNG pixel data: {exc}") from None
    if len(raw) != (width + 1) * height:
        raise ImageFormatError("PNG pixel data has wrong length")
    return GrayImage(width, height, _unfilter(raw, width, height))


# ---------------------------------------------------------------------------
# PGM (binary, P5)


def _encode_pgm(raster: np.ndarray) -> bytes:
    height, width = raster.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + raster.tobytes()


def _decode_pgm(blob: bytes) -> GrayImage:
    if not blob.startswith(b"P5"):
        raise ImageFormatError("not a binary PGM (P5) file")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise ImageFormatError("truncated PGM header")
        ch = blob[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(blob) and blob[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise ImageFormatError(f"malformed PGM header near byte {pos}")
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = blob[pos : pos + width * height]
    if len(pixels) != width * height:
        raise ImageFormatError("PGM pixel data truncated")
    return GrayImage(width, height, pixels)


# ---------------------------------------------------------------------------
# public API


def _as_plane(values) -> np.ndarray:
    arr = values.data if isinstance(values, Tensor) else np.asarray(values)
    plane = arr
    while plane.ndim > 2 and plane.shape[0] == 1:
        plane = plane[0]
    if plane.ndim != 2:
        raise ValueError(f"expected a single 2d image plane, got shape {arr.shape}")
    return plane


def _quantize(plane: np.ndarray) -> np.ndarray:
    if plane.size and (plane.min() < 0.0 or plane.max() > 1.0):
        raise ValueError(
            f"pixel values outside [0, 1] (min {plane.min():.4g}, max {plane.max():.4g}); clamp first"
        )
    # np.rint rounds ties to even, so 127.5 -> 128 and golden files are stable
    return np.rint(plane.astype(np.float64) * 255.0).astype(np.uint8)


def save(values, path) -> None:
    """Write a [0, 1] image plane as 8-bit grayscale PNG or PGM (by extension)."""
    plane = _quantize(_as_plane(values))
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        blob = _encode_png(plane, color=False)
    elif suffix == ".pgm":
        blob = _encode_pgm(plane)
    else:
        raise ValueError(f"unsupported image extension {suffix!r} (use .png or .pgm)")
    Path(path).write_bytes(blob)


def save_rgb(rgb: np.ndarray, path) -> None:
    """Write an [H, W, 3] array of [0, 1] floats as an RGB PNG (overlays only)."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3] array, got {arr.shape}")
    if Path(path).suffix.lower() != ".png":
        raise ValueError("RGB output is PNG only")
    Path(path).write_bytes(_encode_png(_quantize(arr.reshape(-1, 3)).reshape(arr.shape), color=True))


def load(path) -> Tensor:
    """Read an 8-bit grayscale PNG/PGM as a [1, 1, H, W] tensor of byte/255 values."""
    blob = Path(path).read_bytes()
    if blob.startswith(_PNG_SIGNATURE):
        img = _decode_png(blob)
    elif blob.startswith(b"P5"):
        img = _decode_pgm(blob)
    else:
        raise ImageFormatError(f"{path}: neither PNG nor binary PGM")
    return Tensor(img.to_unit_array()[None, None, :, :])


def load_gray(path) -> GrayImage:
    """Read a grayscale file without converting to float."""
    blob = Path(path).read_bytes()
    if blob.startswith(_PNG_SIGNATURE):
        return _decode_png(blob)
    if blob.startswith(b"P5"):
        return _decode_pgm(blob)
    raise ImageFormatError(f"{path}: neither PNG nor binary PGM")
