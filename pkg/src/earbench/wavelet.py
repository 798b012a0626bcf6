"""Separable 2-D discrete wavelet transform with the biorthogonal 4.4 bank.

Analysis uses whole-point symmetric ('reflect') boundary extension and keeps
the even phase of the lowpass / odd phase of the highpass output, so every
subband has ceil(n/2) samples per axis. Odd-length axes are first padded by
one duplicated edge sample; the original length is recorded so synthesis can
crop. Synthesis re-extends each subband with the symmetry induced by the
analysis phases, which makes the round trip exact to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# 9/7 filter bank, zero-centered taps. Lowpass DC gain 1 on the analysis
# side and 2 on the synthesis side; highpasses derived by modulation.
_ANALYSIS_LO = (
    0.02674875741081004, -0.016864118442874967, -0.0782232665289901,
    0.266864118442875, 0.6029490182363602, 0.266864118442875,
    -0.0782232665289901, -0.016864118442874967, 0.02674875741081004,
)
_ANALYSIS_HI = (
    0.09127176311425014, -0.05754352622850027, -0.5912717631142501,
    1.1150870524570005, -0.5912717631142501, -0.05754352622850027,
    0.09127176311425014,
)


def _modulate(taps):
    center = len(taps) // 2
    return tuple(((-1) ** abs(i - center)) * c for i, c in enumerate(taps))


@dataclass(frozen=True)
class BiorFilters:
    """Analysis/synthesis filter pairs of a biorthogonal two-channel bank."""

    analysis_lo: tuple[float, ...] = _ANALYSIS_LO
    analysis_hi: tuple[float, ...] = _ANALYSIS_HI
    synthesis_lo: tuple[float, ...] = _modulate(_ANALYSIS_HI)
    synthesis_hi: tuple[float, ...] = _modulate(_ANALYSIS_LO)

    def __post_init__(self):
        for taps in (self.analysis_lo, self.analysis_hi,
                     self.synthesis_lo, self.synthesis_hi):
            if len(taps) % 2 != 1:
                raise DataError("filters must have odd length (zero-centered)")


BIOR_4_4 = BiorFilters()


@dataclass(frozen=True)
class WaveletDecomposition:
    """Multi-level decomposition: per-level (H, V, D) details plus final approximation.

    `shapes[k]` records the input dimensions at level k+1, which synthesis
    needs to undo the odd-length padding.
    """

    levels: int
    details: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]
    approx: np.ndarray = field(repr=False)
    shapes: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.levels != len(self.details) or self.levels != len(self.shapes):
            raise DataError("level count does not match detail/shape bookkeeping")

    def subbands(self):
        """Yield (name, coeffs) pairs: h1, v1, d1, ..., then the approximation."""
        for lvl, (h, v, d) in enumerate(self.details, start=1):
            yield f"h{lvl}", h
            yield f"v{lvl}", v
            yield f"d{lvl}", d
        yield f"a{self.levels}", self.approx


def _filter_downsample(x: np.ndarray, taps, phase: int) -> np.ndarray:
    # correlate along the last axis with whole-point symmetric extension,
    # then keep samples at `phase`, `phase+2`, ... (x must have even length)
    half = len(taps) // 2
    xe = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(half, half)], mode="reflect")
    n = x.shape[-1]
    out = np.zeros(x.shape[:-1] + ((n - phase + 1) // 2,), dtype=np.float64)
    for j, c in enumerate(taps):
        out += c * xe[..., phase + j: phase + j + n: 2][..., : out.shape[-1]]
    return out


def _fold_lo(j: int, m: int) -> int:
    # even-phase subband symmetry: whole-point left, half-point right
    while j < 0 or j > m - 1:
        if j < 0:
            j = -j
        if j > m - 1:
            j = 2 * m - 1 - j
    return j


def _fold_hi(j: int, m: int) -> int:
    # odd-phase subband symmetry: half-point left, whole-point right
    while j < 0 or j > m - 1:
        if j < 0:
            j = -j - 1
        if j > m - 1:
            j = 2 * m - 2 - j
    return j


def _upsample_filter(coeffs: np.ndarray, taps, phase: int, fold, n: int) -> np.ndarray:
    # zero-stuffed synthesis along the last axis; `fold` extends the subband
    m = coeffs.shape[-1]
    pad = len(taps) // 2 + 1
    idx = np.array([fold(j, m) for j in range(-pad, m + pad)])
    ext = coeffs[..., idx]
    up = np.zeros(coeffs.shape[:-1] + (2 * (m + 2 * pad),), dtype=np.float64)
    up[..., phase::2] = ext
    half = len(taps) // 2
    out = np.zeros(coeffs.shape[:-1] + (n,), dtype=np.float64)
    base = 2 * pad - half
    for j, c in enumerate(taps):
        out += c * up[..., base + j: base + j + n]
    return out


def _analyze_axis(x: np.ndarray, filters: BiorFilters):
    #  pad odd-length axis with one duplicated edge sample, then split phases
    if x.shape[-1] % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
    lo = _filter_downsample(x, filters.analysis_lo, phase=0)
    hi = _filter_downsample(x, filters.analysis_hi, phase=1)
    return lo, hi


def _synthesize_axis(lo: np.ndarray, hi: np.ndarray, filters: BiorFilters, n: int):
    if lo.shape != hi.shape:
        raise DataError(f"subband shape mismatch: {lo.shape} vs {hi.shape}")
    n_pad = n + (n % 2)
    if lo.shape[-1] != (n_pad + 1) // 2:
        raise DataError(
            f"subband length {lo.shape[-1]} inconsistent with signal length {n}")
    out = (_upsample_filter(lo, filters.synthesis_lo, 0, _fold_lo, n_pad)
           + _upsample_filter(hi, filters.synthesis_hi, 1, _fold_hi, n_pad))
    return out[..., :n]


def dwt1(x: np.ndarray, filters: BiorFilters = BIOR_4_4):
    """Single-level 1-D transform; returns (approx, detail)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise DataError("signal too short for one decomposition level")
    return _analyze_axis(x, filters)


def idwt1(lo: np.ndarray, hi: np.ndarray, n: int, filters: BiorFilters = BIOR_4_4):
    """Inverse of :func:`dwt1` for a signal of original length ``n``."""
    return _synthesize_axis(np.asarray(lo, np.float64), np.asarray(hi, np.float64),
                            filters, n)


def dwt2(img: np.ndarray, filters: BiorFilters = BIOR_4_4, levels: int = 1) -> WaveletDecomposition:
    """Multi-level 2-D Mallat decomposition of a real matrix."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {a.shape}")
    if levels < 1:
        raise DataError("level count must be >= 1")
    if min(a.shape) < 2 ** levels:
        raise DataError(
            f"image {a.shape} too small for {levels} decomposition levels")
    details = []
    shapes = []
    for _ in range(levels):
        shapes.append(a.shape)
        lo_c, hi_c = _analyze_axis(a, filters)              # along columns (width)
        ll, lh = (t.T for t in _analyze_axis(lo_c.T, filters))   # along rows (height)
        hl, hh = (t.T for t in _analyze_axis(hi_c.T, filters))
        details.append((hl, lh, hh))    # (horizontal, vertical, diagonal)
        a = ll
    return WaveletDecomposition(levels=levels, details=tuple(details),
                                approx=a, shapes=tuple(shapes))


def idwt2(dec: WaveletDecomposition, filters: BiorFilters = BIOR_4_4) -> np.ndarray:
    """Reconstruct the matrix that produced ``dec`` (up to float precision)."""
    a = dec.approx
    for (h, v, d), (rows, cols) in zip(dec.details[::-1], dec.shapes[::-1]):
        lo_c = _synthesize_axis(a.T, v.T, filters, rows).T
        hi_c = _synthesize_axis(h.T, d.T, filters, rows).T
        a = _synthesize_axis(lo_c, hi_c, filters, cols)
    return a


def subband_energy(coeffs: np.ndarray) -> float:
    """Mean squared coefficient of a subband (size-invariant energy)."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size == 0:
        raise DataError("cannot compute energy of an empty coefficient matrix")
    return float(np.mean(c * c))
