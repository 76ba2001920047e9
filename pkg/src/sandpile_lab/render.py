"""Pixel-exact images of stable configurations.

One lattice site is one pixel. The image column follows the first lattice
coordinate and rows run from the largest second coordinate at the top down
to the smallest, so pictures appear with the usual axis orientation.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import CropOutOfBounds
from .lattice import ChipGrid
from .validation import check_chip_grid


@dataclass(frozen=True)
class Palette:
    """Colour for each chip count ``0 .. len(colors) - 1``."""

    colors: tuple

    def __post_init__(self):
        colors = tuple(tuple(int(c) for c in rgb) for rgb in self.colors)
        if not colors:
            raise ValueError("palette needs at least one colour")
        for rgb in colors:
            if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
                raise ValueError(f"invalid RGB triple {rgb}")
        if len(set(colors)) != len(colors):
            raise ValueError("palette colours must be distinct")
        object.__setattr__(self, "colors", colors)

    @classmethod
    def default(cls, d: int = 2) -> "Palette":
        if d == 2:
            return cls(((255, 255, 255), (192, 192, 192), (96, 96, 96), (0, 0, 0)))
        return cls.gray(2 * d)

    @classmethod
    def gray(cls, levels: int) -> "Palette":
        """Even ramp from white (0 chips) to black (``levels - 1`` chips)."""
        if levels < 2:
            raise ValueError("a ramp needs at least two levels")
        steps = [round(255 * (1 - i / (levels - 1))) for i in range(levels)]
        return cls(tuple((g, g, g) for g in steps))

    @classmethod
    def named(cls, name: str, d: int = 2) -> "Palette":
        """``default`` (the four grays in d=2) or ``gray`` (an even ramp)."""
        if name == "default":
            return cls.default(d)
        if name == "gray":
            return cls.gray(2 * d)
        raise ValueError(f"unknown palette {name!r}; choose 'default' or 'gray'")

    def lookup(self) -> np.ndarray:
        return np.array(self.colors, dtype=np.uint8)


def parse_crop(text: str) -> tuple[int, int, int, int]:
    """``"x0,y0,x1,y1"`` to a tuple of ints."""
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"crop must be four integers, got {text!r}") from None
    if len(parts) != 4:
        raise ValueError(f"crop must be four integers, got {text!r}")
    return parts


def _plane(s: ChipGrid, plane: int) -> np.ndarray:
    if s.d == 2:
        return s.counts
    if not -s.box.k <= plane <= s.box.k:
        raise CropOutOfBounds(f"plane {plane} outside [-{s.box.k}, {s.box.k}]")
    return s.counts[:, :, plane + s.box.k]


def render_rgb(s, palette: Palette | None = None, crop=None, plane: int = 0) -> np.ndarray:
    """``(rows, cols, 3)`` uint8 image of ``s``.

    ``crop = (x0, y0, x1, y1)`` is an inclusive rectangle in lattice
    coordinates. In d=3 the slice with third coordinate ``plane`` is drawn.
    """
    s = check_chip_grid(s)
    palette = palette or Palette.default(s.d)
    k = s.box.k
    x0, y0, x1, y1 = crop if crop is not None else (-k, -k, k, k)
    if x0 > x1 or y0 > y1:
        raise CropOutOfBounds(f"empty crop {crop}")
    if min(x0, y0) < -k or max(x1, y1) > k:
        raise CropOutOfBounds(f"crop {crop} leaves the box [-{k}, {k}]^2")
    counts = _plane(s, plane)[x0 + k:x1 + k + 1, y0 + k:y1 + k + 1]
    lut = palette.lookup()
    if counts.size and counts.max() >= len(lut):
        raise ValueError(f"palette has {len(lut)} colours but a site holds {int(counts.max())} chips")
    # x to columns, y to rows with +y at the top
    return lut[counts.T[::-1]]


def _chunk(tag: bytes, data: bytes) -> bytes:
    body = tag + data
    return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)


def encode_png(rgb: np.ndarray) -> bytes:
    """8-bit RGB PNG, no filtering, fixed compression level."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    rows, cols, _ = rgb.shape
    raw = np.zeros((rows, 1 + 3 * cols), dtype=np.uint8)
    raw[:, 1:] = rgb.reshape(rows, 3 * cols)
    header = struct.pack(">IIBBBBB", cols, rows, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", header)
            + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 9)) + _chunk(b"IEND", b""))


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    rows, cols, _ = rgb.shape
    return f"P6\n{cols} {rows}\n255\n".encode("ascii") + rgb.tobytes()


def render_png(s, palette: Palette | None = None, crop=None, plane: int = 0) -> bytes:
    return encode_png(render_rgb(s, palette, crop, plane))


def render_ppm(s, palette: Palette | None = None, crop=None, plane: int = 0) -> bytes:
    return encode_ppm(render_rgb(s, palette, crop, plane))


def decode_png(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_png` (unfiltered 8-bit RGB only)."""
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG stream")
    pos, idat, size = 8, b"", None
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        if tag == b"IHDR":
            cols, rows, depth, ctype = struct.unpack(">IIBB", body[:10])
            if depth != 8 or ctype != 2:
                raise ValueError("only 8-bit RGB is supported")
            size = (rows, cols)
        elif tag == b"IDAT":
            idat += body
        pos += 12 + length
    if size is None:
        raise ValueError("missing IHDR chunk")
    rows, cols = size
    raw = np.frombuffer(zlib.decompress(idat), dtype=np.uint8).reshape(rows, 1 + 3 * cols)
    if raw[:, 0].any():
        raise ValueError("filtered scanlines are not supported")
    return raw[:, 1:].reshape(rows, cols, 3).copy()
