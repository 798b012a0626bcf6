"""Hand-crafted ear descriptors: uniform LBP, HOG, PHOG, intuitionistic fuzzy
LBP and biorthogonal-wavelet block energies.

Every extractor is a pure function GrayImage -> FeatureVector and safe for
concurrent use across images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .imagecore import GrayImage, partition_blocks, resize_bilinear, tile_edges
from .wavelet import BIOR_4_4, dwt2, subband_energy


@dataclass(frozen=True)
class FeatureVector:
    """Named fixed-dimension real descriptor of one image."""

    descriptor_id: str
    image_id: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DataError(f"feature values must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"non-finite feature values for image {self.image_id!r}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# uniform LBP


@dataclass(frozen=True)
class LbpParams:
    radius: int = 2
    neighbors: int = 8
    patch: int = 16
    stride: int = 4

    def __post_init__(self):
        if self.radius <= 0 or self.stride < 1:
            raise DataError("radius and stride must be positive")
        if self.neighbors != 8:
            raise DataError("the uniform-59 mapping requires 8 neighbors")
        if self.patch < 2 * self.radius + 1:
            raise DataError("patch must cover the full circular neighborhood")


def _uniform_bin_table(p: int = 8) -> np.ndarray:
    # codes with <= 2 circular 0/1 transitions get bins 0..57 (ascending code
    # order); everything else falls into the catch-all bin 58
    uniform = []
    for code in range(2 ** p):
        rot = ((code << 1) | (code >> (p - 1))) & (2 ** p - 1)
        if bin(code ^ rot).count("1") <= 2:
            uniform.append(code)
    table = np.full(2 ** p, len(uniform), dtype=np.int64)
    for b, code in enumerate(uniform):
        table[code] = b
    return table


_ULBP_TABLE = _uniform_bin_table(8)
ULBP_BINS = 59


def _circular_offsets(radius: float, neighbors: int):
    # neighbor k sits at (row - R sin a_k, col + R cos a_k), a_k = 2 pi k / P;
    # offsets within 1e-8 of an integer are snapped so axis-aligned samples
    # stay exact integer reads
    offs = []
    for k in range(neighbors):
        a = 2.0 * math.pi * k / neighbors
        dy = -radius * math.sin(a)
        dx = radius * math.cos(a)
        dy = round(dy) if abs(dy - round(dy)) < 1e-8 else dy
        dx = round(dx) if abs(dx - round(dx)) < 1e-8 else dx
        offs.append((dy, dx))
    return offs


def _lbp_code_map(pixels: np.ndarray, radius: int, neighbors: int) -> np.ndarray:
    """LBP codes for all pixels whose circular neighborhood fits the image.

    Returns an (h-2R, w-2R) int array; bit k is set iff the (bilinearly
    interpolated) neighbor k is >= the center. Interpolation works on integer
    differences to the center so the comparison is exact for constant
    neighborhoods and invariant under gains that are powers of two.
    """
    h, w = pixels.shape
    r = radius
    if h < 2 * r + 1 or w < 2 * r + 1:
        raise DataError("image smaller than the LBP neighborhood")
    center = pixels[r:h - r, r:w - r].astype(np.int64)
    codes = np.zeros(center.shape, dtype=np.int64)
    src = pixels.astype(np.int64)
    for k, (dy, dx) in enumerate(_circular_offsets(radius, neighbors)):
        if isinstance(dy, int) and isinstance(dx, int):
            sample = src[r + dy:h - r + dy, r + dx:w - r + dx]
            bit = sample >= center
        else:
            y0, x0 = math.floor(dy), math.floor(dx)
            fy, fx = dy - y0, dx - x0
            d00 = src[r + y0:h - r + y0, r + x0:w - r + x0] - center
            d01 = src[r + y0:h - r + y0, r + x0 + 1:w - r + x0 + 1] - center
            d10 = src[r + y0 + 1:h - r + y0 + 1, r + x0:w - r + x0] - center
            d11 = src[r + y0 + 1:h - r + y0 + 1, r + x0 + 1:w - r + x0 + 1] - center
            diff = ((1 - fy) * (1 - fx) * d00 + (1 - fy) * fx * d01
                    + fy * (1 - fx) * d10 + fy * fx * d11)
            bit = diff >= 0.0
        codes |= bit.astype(np.int64) << k
    return codes


def extract_ulbp(img: GrayImage, p: LbpParams = LbpParams(),
                 image_id: str = "") -> FeatureVector:
    """Concatenated per-patch uniform-LBP histograms (59 bins per patch).

    Patches of size ``p.patch`` are slid with step ``p.stride``; windows that
    do not fit completely are discarded. Within a patch only pixels whose full
    circular neighborhood lies inside the patch contribute, so every patch
    histogram has (patch - 2R)^2 total mass.
    """
    h, w = img.height, img.width
    if p.patch > h or p.patch > w:
        raise DataError(f"patch {p.patch} larger than image {h}x{w}")
    bins = _ULBP_TABLE[_lbp_code_map(img.pixels, p.radius, p.neighbors)]
    inner = p.patch - 2 * p.radius
    ny = (h - p.patch) // p.stride + 1
    nx = (w - p.patch) // p.stride + 1
    hists = np.zeros((ny * nx, ULBP_BINS), dtype=np.float64)
    for i in range(ny):
        for j in range(nx):
            top = i * p.stride
            left = j * p.stride
            region = bins[top:top + inner, left:left + inner]
            hists[i * nx + j] = np.bincount(region.ravel(), minlength=ULBP_BINS)
    return FeatureVector("ulbp", image_id, hists.ravel())


def ulbp_dim(width: int, height: int, p: LbpParams = LbpParams()) -> int:
    ny = (height - p.patch) // p.stride + 1
    nx = (width - p.patch) // p.stride + 1
    return ny * nx * ULBP_BINS


# ---------------------------------------------------------------------------
# HOG / PHOG


def _gradients(pixels: np.ndarray, signed: bool):
    # central differences (one-sided at the borders), orientation in degrees
    src = pixels.astype(np.float64)
    gy, gx = np.gradient(src)
    mag = np.hypot(gx, gy)
    span = 360.0 if signed else 180.0
    ang = np.degrees(np.arctan2(gy, gx)) % span
    return mag, ang, span


def extract_hog(img: GrayImage, cell: int = 8, block: int = 2, bins: int = 9,
                signed: bool = False, image_id: str = "") -> FeatureVector:
    """Dense HOG: per-cell orientation histograms with linear bin
    interpolation, L2-hys normalization over sliding cell blocks."""
    if cell < 1 or cell > min(img.height, img.width):
        raise DataError(f"cell size {cell} does not fit image "
                        f"{img.height}x{img.width}")
    ch, cw = img.height // cell, img.width // cell
    if ch < block or cw < block:
        raise DataError("image has fewer cells than one block")
    region = img.pixels[:ch * cell, :cw * cell]
    mag, ang, span = _gradients(region, signed)
    width = span / bins
    t = ang / width
    b0 = np.floor(t).astype(np.intp) % bins
    w1 = t - np.floor(t)
    b1 = (b0 + 1) % bins
    rows = np.repeat(np.arange(ch), cell)
    cols = np.repeat(np.arange(cw), cell)
    cell_idx = rows[:, None] * cw + cols[None, :]
    hist = np.zeros((ch * cw, bins), dtype=np.float64)
    np.add.at(hist, (cell_idx.ravel(), b0.ravel()), (mag * (1 - w1)).ravel())
    np.add.at(hist, (cell_idx.ravel(), b1.ravel()), (mag * w1).ravel())
    hist = hist.reshape(ch, cw, bins)

    def l2_normalize(v):
        n = np.sqrt(np.sum(v * v))
        return v / n if n > 0 else v

    out = []
    for by in range(ch - block + 1):
        for bx in range(cw - block + 1):
            v = hist[by:by + block, bx:bx + block].ravel()
            v = l2_normalize(v)
            v = np.minimum(v, 0.2)          # hysteresis clip
            out.append(l2_normalize(v))
    return FeatureVector("hog", image_id, np.concatenate(out))


def hog_dim(width: int, height: int, cell: int = 8, block: int = 2,
            bins: int = 9) -> int:
    ch, cw = height // cell, width // cell
    return (ch - block + 1) * (cw - block + 1) * block * block * bins


@dataclass(frozen=True)
class PhogParams:
    levels: int = 2          # pyramid levels beyond the whole-image cell
    bins: int = 8
    signed: bool = False

    def __post_init__(self):
        if self.levels < 0 or self.bins < 2:
            raise DataError("need levels >= 0 and at least 2 orientation bins")


def extract_phog(img: GrayImage, p: PhogParams = PhogParams(),
                 image_id: str = "") -> FeatureVector:
    """Pyramid of magnitude-weighted orientation histograms.

    Level l tiles the image into 2^l x 2^l cells; each level's concatenated
    histogram is L1-normalized before the levels are joined.
    """
    if min(img.height, img.width) < 2 ** p.levels:
        raise DataError(f"image {img.height}x{img.width} too small for "
                        f"pyramid level {p.levels}")
    mag, ang, span = _gradients(img.pixels, p.signed)
    width = span / p.bins
    bin_idx = np.minimum((ang / width).astype(np.intp), p.bins - 1)
    parts = []
    for lvl in range(p.levels + 1):
        n = 2 ** lvl
        re = tile_edges(img.height, n)
        ce = tile_edges(img.width, n)
        level = np.zeros(n * n * p.bins, dtype=np.float64)
        for i in range(n):
            for j in range(n):
                cell_bins = bin_idx[re[i]:re[i + 1], ce[j]:ce[j + 1]]
                cell_mag = mag[re[i]:re[i + 1], ce[j]:ce[j + 1]]
                hist = np.bincount(cell_bins.ravel(), weights=cell_mag.ravel(),
                                   minlength=p.bins)
                level[(i * n + j) * p.bins:(i * n + j + 1) * p.bins] = hist
        total = level.sum()
        if total > 0:
            level /= total
        parts.append(level)
    return FeatureVector("phog", image_id, np.concatenate(parts))


def phog_dim(p: PhogParams = PhogParams()) -> int:
    return p.bins * sum(4 ** lvl for lvl in range(p.levels + 1))


# ---------------------------------------------------------------------------
# intuitionistic fuzzy LBP


@dataclass(frozen=True)
class IflbpParams:
    fuzz_width: float = 5.0      # triangular membership half-width, intensity units
    sugeno_lambda: float = 2.0   # non-membership generator parameter

    def __post_init__(self):
        if self.fuzz_width <= 0:
            raise DataError("fuzzification width must be positive")
        if self.sugeno_lambda <= -1:
            raise DataError("Sugeno lambda must be > -1")


# square 3x3 neighborhood, east first, counterclockwise
_IFLBP_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1),
                  (0, -1), (1, -1), (1, 0), (1, 1))

IFLBP_BINS = 256


def _intuitionistic_pair(mu1: np.ndarray, lam: float):
    # mu' = mu + hesitation = 1 - sugeno(mu); renormalize the (bit=1, bit=0)
    # pair so every pixel distributes exactly unit mass over the codes
    def boosted(mu):
        return 1.0 - (1.0 - mu) / (1.0 + lam * mu)

    m1 = boosted(mu1)
    m0 = boosted(1.0 - mu1)
    total = m1 + m0
    return m1 / total, m0 / total


def extract_iflbp(img: GrayImage, p: IflbpParams = IflbpParams(),
                  image_id: str = "") -> FeatureVector:
    """Soft 256-bin LBP histogram from intuitionistic fuzzy bit memberships.

    Each interior pixel spreads unit mass over all 256 codes through the
    product of per-neighbor memberships; the histogram is L1-normalized.
    """
    h, w = img.height, img.width
    if h < 3 or w < 3:
        raise DataError("image smaller than the 3x3 neighborhood")
    src = img.pixels.astype(np.float64)
    center = src[1:h - 1, 1:w - 1]
    n = center.size
    # mass[:, c] accumulates the product over the bits of code c
    mass = np.ones((n, 1), dtype=np.float64)
    for k, (dy, dx) in enumerate(_IFLBP_OFFSETS):
        d = src[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx] - center
        mu1 = np.clip((d + p.fuzz_width) / (2.0 * p.fuzz_width), 0.0, 1.0)
        m1, m0 = _intuitionistic_pair(mu1.ravel(), p.sugeno_lambda)
        pair = np.stack([m0, m1], axis=1)            # (n, 2) indexed by bit k
        mass = (pair[:, :, None] * mass[:, None, :]).reshape(n, -1)
    hist = mass.sum(axis=0)
    total = hist.sum()
    if total > 0:
        hist /= total
    return FeatureVector("iflbp", image_id, hist)


def crisp_lbp_histogram(img: GrayImage) -> np.ndarray:
    """Classic 256-bin LBP histogram (bit set iff neighbor >= center),
    L1-normalized; the hard-threshold counterpart of extract_iflbp."""
    h, w = img.height, img.width
    src = img.pixels.astype(np.int64)
    center = src[1:h - 1, 1:w - 1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for k, (dy, dx) in enumerate(_IFLBP_OFFSETS):
        neighbor = src[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        codes |= (neighbor >= center).astype(np.int64) << k
    hist = np.bincount(codes.ravel(), minlength=IFLBP_BINS).astype(np.float64)
    return hist / hist.sum()


# ---------------------------------------------------------------------------
# wavelet block energies


@dataclass(frozen=True)
class BiorParams:
    levels: int = 4
    block_rows: int = 3
    block_cols: int = 2
    block_size: int = 32     # blocks are resized to this square before the DWT

    def __post_init__(self):
        if self.block_rows < 1 or self.block_cols < 1 or self.levels < 1:
            raise DataError("grid dimensions and level count must be positive")
        if self.block_size < 2 ** self.levels:
            raise DataError("block working size too small for the level count")


def extract_bior_energy(img: GrayImage, p: BiorParams = BiorParams(),
                        image_id: str = "") -> FeatureVector:
    """Per-block detail-subband energies of the bior4.4 decomposition.

    The image is tiled into block_rows x block_cols blocks, each resized to
    block_size^2 and decomposed to ``levels``; features are ordered block-major,
    then by level, then by orientation (H, V, D).
    """
    if img.height < p.block_rows or img.width < p.block_cols:
        img = resize_bilinear(img, max(img.width, p.block_cols),
                              max(img.height, p.block_rows))
    grid = partition_blocks(img, p.block_rows, p.block_cols)
    values = []
    for blk in grid.blocks:
        sq = resize_bilinear(blk, p.block_size, p.block_size)
        dec = dwt2(sq.pixels.astype(np.float64), BIOR_4_4, p.levels)
        for (hh, vv, dd) in dec.details:
            values.extend((subband_energy(hh), subband_energy(vv),
                           subband_energy(dd)))
    return FeatureVector("bior", image_id, np.array(values))


def bior_dim(p: BiorParams = BiorParams()) -> int:
    return p.block_rows * p.block_cols * p.levels * 3
