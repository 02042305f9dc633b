"""Minimal deterministic PNG writer for synthetic chart images.

The offline demo needs chart image files whose bytes are identical on
every run (ids derive from content hashes). Plot libraries embed
version-dependent metadata, so the demo paints its tiny bar charts
directly into an RGB grid and serializes them here.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

WHITE = (255, 255, 255)


def _chunk(tag: bytes, data: bytes) -> bytes:
    raw = tag + data
    return struct.pack(">I", len(data)) + raw + struct.pack(">I", zlib.crc32(raw))


def png_bytes(pixels: list[list[tuple[int, int, int]]]) -> bytes:
    height = len(pixels)
    width = len(pixels[0])
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    raw = b"".join(
        b"\x00" + b"".join(bytes(px) for px in row) for row in pixels)
    return (b"\x89PNG\r\n\x1a\n"
            + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw, 9))
            + _chunk(b"IEND", b""))


def write_png(path: str | Path, pixels: list[list[tuple[int, int, int]]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(pixels))
    return path


def bar_chart_pixels(values: list[float], width: int = 64, height: int = 48,
                     color: tuple[int, int, int] = (40, 90, 200)) -> list[list[tuple[int, int, int]]]:
    """Paint values as vertical bars on a white background. Purely a way
    to make visually-distinct, content-distinct fixture images.
    """
    grid = [[WHITE for _ in range(width)] for _ in range(height)]
    if not values:
        return grid
    peak = max(max(values), 1e-9)
    slot = width // len(values)
    for i, value in enumerate(values):
        bar_h = max(1, int(round(value / peak * (height - 2))))
        x0 = i * slot + 1
        x1 = min((i + 1) * slot - 1, width)
        for y in range(height - bar_h, height):
            for x in range(x0, x1):
                grid[y][x] = color
    return grid
