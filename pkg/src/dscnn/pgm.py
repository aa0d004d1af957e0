"""Minimal binary PGM (P5) reader and writer."""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out: list[bytes] = []
    pos = 0
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def parse_pgm(data: bytes, source: str = "<bytes>") -> tuple[np.ndarray, int]:
    if data[:2] != b"P5":
        kind = data[:2].decode("latin-1", "replace")
        raise FormatError(f"{source}: not a binary grayscale PGM (magic {kind!r}, expected 'P5')")
    (magic, w, h, maxval), pos = _tokens(data, 4)
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{source}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{source}: invalid PGM dimensions or maxval")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise FormatError(f"{source}: expected {need} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=dtype).reshape(height, width).astype(np.uint16), maxval


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)`` with pixels as an (H, W) uint16 array."""
    with open(path, "rb") as fh:
        return parse_pgm(fh.read(), str(path))


def encode_pgm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {pixels.shape}")
    if pixels.min() < 0 or pixels.max() > maxval:
        raise FormatError(f"pixel values must lie in [0, {maxval}]")
    h, w = pixels.shape
    dtype = "u1" if maxval < 256 else ">u2"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + pixels.astype(dtype).tobytes()


def write_pgm(path: str | os.PathLike, pixels: np.ndarray, maxval: int = 255) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(pixels, maxval))


def to_8bit(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to 0..255 by rounding."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
