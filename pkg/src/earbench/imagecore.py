"""Grayscale image loading, resizing, flipping and block partitioning.

All operations are pure: images are immutable after construction, so they can
be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

# ITU-R BT.601 luma weights for RGB -> gray conversion
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class GrayImage:
    """8-bit single-channel raster stored as an (height, width) uint8 array."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise DataError(f"expected a non-empty 2-D pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
                raise DataError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class BlockGrid:
    """Non-overlapping tiling of an image, blocks in row-major order."""

    rows: int
    cols: int
    blocks: tuple[GrayImage, ...]

    def __post_init__(self):
        if self.rows * self.cols != len(self.blocks):
            raise DataError("rows * cols must equal the number of blocks")


def load_grayscale(path) -> GrayImage:
    """Decode a PNG/JPEG file to grayscale.

    Color inputs are converted with luma = round(0.299 R + 0.587 G + 0.114 B).
    Raises OSError (with the offending path) on missing or undecodable files.
    """
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = np.clip(np.rint(rgb @ _LUMA), 0, 255).astype(np.uint8)
    except UnidentifiedImageError as exc:
        raise OSError(f"cannot decode image file: {path}") from exc
    except FileNotFoundError as exc:
        raise OSError(f"image file not found: {path}") from exc
    return GrayImage(arr)


def resize_bilinear(img: GrayImage, w: int, h: int) -> GrayImage:
    """Resize to w x h with pixel-center-aligned bilinear interpolation.

    Sample positions are (i + 0.5) * scale - 0.5; results are rounded to the
    nearest integer and clamped to [0, 255].
    """
    if w <= 0 or h <= 0:
        raise DataError(f"target dimensions must be positive, got {w}x{h}")
    if w == img.width and h == img.height:
        return GrayImage(img.pixels)
    src = img.pixels.astype(np.float64)

    def axis_coords(n_src, n_dst):
        c = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        c = np.clip(c, 0.0, n_src - 1.0)
        i0 = np.floor(c).astype(np.intp)
        frac = c - i0
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, frac

    x0, x1, fx = axis_coords(img.width, w)
    y0, y1, fy = axis_coords(img.height, h)
    fx = fx[None, :]
    fy = fy[:, None]
    p00 = src[np.ix_(y0, x0)]
    p01 = src[np.ix_(y0, x1)]
    p10 = src[np.ix_(y1, x0)]
    p11 = src[np.ix_(y1, x1)]
    out = (p00 * (1 - fx) * (1 - fy) + p01 * fx * (1 - fy)
           + p10 * (1 - fx) * fy + p11 * fx * fy)
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def flip_horizontal(img: GrayImage) -> GrayImage:
    """Mirror the image left-right: pixel (x, y) -> (width-1-x, y)."""
    return GrayImage(img.pixels[:, ::-1])


def tile_edges(n: int, parts: int) -> list[int]:
    """Split [0, n) into `parts` contiguous runs; the last run absorbs the remainder."""
    if parts < 1 or parts > n:
        raise DataError(f"cannot split extent {n} into {parts} parts")
    step = n // parts
    return [i * step for i in range(parts)] + [n]


def partition_blocks(img: GrayImage, rows: int, cols: int) -> BlockGrid:
    """Tile the image into rows x cols non-overlapping blocks (row-major order)."""
    if rows > img.height or cols > img.width:
        raise DataError(
            f"grid {rows}x{cols} larger than image {img.height}x{img.width}")
    re = tile_edges(img.height, rows)
    ce = tile_edges(img.width, cols)
    blocks = []
    for i in range(rows):
        for j in range(cols):
            blocks.append(GrayImage(img.pixels[re[i]:re[i + 1], ce[j]:ce[j + 1]]))
    return BlockGrid(rows=rows, cols=cols, blocks=tuple(blocks))
