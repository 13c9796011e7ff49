"""Binary raster (``.msr``) and label-mask (binary PGM) file formats.

``.msr`` layout, all little-endian::

    offset 0   4 bytes   magic "MSR1"
    offset 4   u32       height
    offset 8   u32       width
    offset 12  f32 * height * width, row-major

Masks are binary PGM ("P5") with maxval 255; pixel values are restricted to
0 (background), 1 (crop), 2 (weed) and 255 (unlabeled).
"""
from __future__ import annotations

import os
import re
import struct

import numpy as np

from ..errors import FormatError

MSR_MAGIC = b"MSR1"
MSR_HEADER = struct.Struct("<4sII")
MASK_VALUES = (0, 1, 2, 255)
# rasters larger than this are treated as corrupt extents
MAX_PIXELS = 1 << 28


def encode_raster(raster) -> bytes:
    arr = np.asarray(raster, dtype="<f4")
    if arr.ndim != 2 or 0 in arr.shape:
        raise FormatError(f"raster must be a non-empty 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    return MSR_HEADER.pack(MSR_MAGIC, h, w) + np.ascontiguousarray(arr).tobytes()


def decode_raster(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("truncated magic", offset=len(buf))
    if buf[:4] != MSR_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MSR_MAGIC!r}", offset=0)
    if len(buf) < MSR_HEADER.size:
        raise FormatError("truncated header", offset=len(buf))
    _, h, w = MSR_HEADER.unpack_from(buf)
    if h == 0:
        raise FormatError("height is zero", offset=4)
    if w == 0:
        raise FormatError("width is zero", offset=8)
    if h * w > MAX_PIXELS:
        raise FormatError(f"extents {h}x{w} overflow the supported raster size", offset=4)
    end = MSR_HEADER.size + 4 * h * w
    if len(buf) < end:
        raise FormatError(f"payload truncated: need {end} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > end:
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", offset=end)
    arr = np.frombuffer(buf, dtype="<f4", count=h * w, offset=MSR_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise FormatError("non-finite sample in payload", offset=MSR_HEADER.size + 4 * int(bad[0]))
    return arr.reshape(h, w).astype(np.float32)


def save_raster(path, raster) -> None:
    data = encode_raster(raster)
    with open(path, "wb") as f:
        f.write(data)


def load_raster(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_raster(f.read())


_PGM_HEADER = re.compile(rb"P5\s(\d+)\s(\d+)\s(\d+)\s")


def encode_mask(mask) -> bytes:
    arr = np.asarray(mask)
    if arr.ndim != 2 or 0 in arr.shape:
        raise FormatError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isin(arr, MASK_VALUES).all():
        raise FormatError("mask values must be in {0, 1, 2, 255}")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.astype(np.uint8).tobytes()


def decode_mask(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        raise FormatError("bad magic, expected binary PGM 'P5'", offset=0)
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise FormatError("malformed PGM header", offset=2)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}", offset=m.start(3))
    if w == 0 or h == 0:
        raise FormatError("PGM extents must be positive", offset=m.start(1))
    if w * h > MAX_PIXELS:
        raise FormatError(f"PGM extents {w}x{h} overflow the supported size", offset=m.start(1))
    start = m.end()
    end = start + w * h
    if len(buf) < end:
        raise FormatError(f"payload truncated: need {end} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > end:
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", offset=end)
    arr = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=start)
    bad = np.flatnonzero(~np.isin(arr, MASK_VALUES))
    if bad.size:
        raise FormatError(f"mask value {int(arr[bad[0]])} not in {{0, 1, 2, 255}}", offset=start + int(bad[0]))
    return arr.reshape(h, w).copy()


def save_mask(path, mask) -> None:
    data = encode_mask(mask)
    with open(path, "wb") as f:
        f.write(data)


def load_mask(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_mask(f.read())


def write_pgm(path, image) -> None:
    """Write an arbitrary 8-bit grayscale image (no value restriction)."""
    arr = np.asarray(image, dtype=np.uint8)
    h, w = arr.shape
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise FormatError("malformed PGM header", offset=0)
    w, h, _ = (int(g) for g in m.groups())
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
