"""Grayscale rasters, binary PGM I/O, integral images and average-box features.

Images are single-channel 8-bit.  The integral image keeps an explicit zero
top row and left column so that any in-bounds box sum reduces to exactly four
table reads and three additions, with no edge special-casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box",
    "GrayImage",
    "IntegralImage",
    "PgmError",
    "avg_box_feature",
    "box_sum",
    "integral_image",
    "integral_stack",
    "load_pgm",
    "round_half_away",
    "write_pgm",
]


class PgmError(ValueError):
    """Malformed or unsupported PGM content."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major 8-bit grayscale raster."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be a non-empty 2-d array")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Summed-area table of a GrayImage.

    ``table[r, c]`` is the sum of all pixels in rows ``[0, r)`` and columns
    ``[0, c)`` of the source image, so the table is one row and one column
    larger than the image and its first row and column are zero.
    """

    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.table)
        if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
            raise ValueError("integral table must be 2-d with a zero border")
        if t.dtype != np.uint64:
            t = t.astype(np.uint64)
        object.__setattr__(self, "table", t)

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1


@dataclass(frozen=True)
class Box:
    """Square pixel region given by its center (row, col) and odd side length."""

    row: int
    col: int
    size: int

    def __post_init__(self) -> None:
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"box size must be odd and positive, got {self.size}")


def integral_image(img: GrayImage) -> IntegralImage:
    """Build the summed-area table for an image."""
    h, w = img.pixels.shape
    table = np.zeros((h + 1, w + 1), dtype=np.uint64)
    table[1:, 1:] = img.pixels.cumsum(axis=0, dtype=np.uint64).cumsum(axis=1)
    return IntegralImage(table)


def integral_stack(patches: np.ndarray) -> np.ndarray:
    """Summed-area tables for a stack of equally sized patches.

    Given ``(n, h, w)`` uint8 patches, returns ``(n, h + 1, w + 1)`` uint64
    tables with the same zero border convention as :func:`integral_image`.
    """
    patches = np.asarray(patches)
    if patches.ndim != 3:
        raise ValueError("expected a (n, h, w) patch stack")
    n, h, w = patches.shape
    out = np.zeros((n, h + 1, w + 1), dtype=np.uint64)
    out[:, 1:, 1:] = patches.cumsum(axis=1, dtype=np.uint64).cumsum(axis=2)
    return out


def box_sum(ii: IntegralImage, box: Box) -> int:
    """Sum of intensities inside ``box``, from four table entries."""
    half = box.size // 2
    r0, r1 = box.row - half, box.row + half + 1
    c0, c1 = box.col - half, box.col + half + 1
    if r0 < 0 or c0 < 0 or r1 > ii.height or c1 > ii.width:
        raise ValueError(f"box out of bounds: center ({box.row}, {box.col}) size {box.size}")
    t = ii.table
    return int(t[r1, c1]) + int(t[r0, c0]) - int(t[r0, c1]) - int(t[r1, c0])


def avg_box_feature(
    ii: IntegralImage,
    p1: tuple[int, int],
    p2: tuple[int, int],
    size: int,
) -> float:
    """Difference between the mean gray values of two equal-size boxes.

    ``p1`` and ``p2`` are (row, col) box centers.  For 8-bit input the result
    lies in [-255, 255].  Raises if either box leaves the image.
    """
    s1 = box_sum(ii, Box(p1[0], p1[1], size))
    s2 = box_sum(ii, Box(p2[0], p2[1], size))
    return (s1 - s2) / float(size * size)


def round_half_away(x):
    """Round to nearest integer with halves going away from zero."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.floor(np.abs(x) + 0.5)
    return np.where(x < 0, -mag, mag)


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM stream with maxval up to 255.

    Header comments are skipped.  Raises :class:`PgmError` on malformed
    headers, unsupported maxval or truncated pixel data.
    """
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise PgmError(f"not a binary PGM stream (magic {magic!r})")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise PgmError(f"malformed header token {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PgmError(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise PgmError(f"unsupported maxval {maxval}")
    if maxval < 1:
        raise PgmError(f"bad maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PgmError("missing raster separator")
    pos += 1
    n = width * height
    raster = data[pos : pos + n]
    if len(raster) < n:
        raise PgmError("truncated pixel data")
    pixels = np.frombuffer(raster, dtype=np.uint8, count=n).reshape(height, width)
    return GrayImage(pixels.copy())


def write_pgm(img: GrayImage) -> bytes:
    """Encode an image as a canonical binary PGM stream."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PgmError("unterminated header comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmError("truncated header")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos
