"""Distance/similarity measures, per-probe score normalization, weighted
sum-rule fusion, and the all-vs-all similarity-matrix engine.

Matrices follow the convention higher = more similar. Matrix computation is
partitioned by probe rows; every row is computed by the same arithmetic
regardless of the partitioning, so results are bit-identical across thread
counts and repeated runs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .descriptors import FeatureVector
from .errors import DataError

CHI2_EPS = 1e-10


@dataclass(frozen=True)
class SimilarityMatrix:
    """Probe x gallery score table with identity metadata (float32 scores)."""

    probe_ids: tuple[str, ...]
    gallery_ids: tuple[str, ...]
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "probe_ids", tuple(self.probe_ids))
        object.__setattr__(self, "gallery_ids", tuple(self.gallery_ids))
        s = np.asarray(self.scores, dtype=np.float32)
        if s.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise DataError(f"score table shape {s.shape} does not match "
                            f"{len(self.probe_ids)} probes x "
                            f"{len(self.gallery_ids)} gallery entries")
        if not np.all(np.isfinite(s)):
            raise DataError("similarity scores must be finite")
        for name, ids in (("probe", self.probe_ids), ("gallery", self.gallery_ids)):
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate {name} ids")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class FusionSpec:
    """Weighted components for sum-rule fusion."""

    components: tuple[tuple[SimilarityMatrix, float], ...]

    def __post_init__(self):
        if not self.components:
            raise DataError("fusion needs at least one component")
        if any(w < 0 for _, w in self.components):
            raise DataError("fusion weights must be non-negative")
        if sum(w for _, w in self.components) <= 0:
            raise DataError("at least one fusion weight must be positive")
        first = self.components[0][0]
        for m, _ in self.components[1:]:
            if m.probe_ids != first.probe_ids or m.gallery_ids != first.gallery_ids:
                raise DataError("fusion components must share identical "
                                "probe and gallery id lists")


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; zero vectors score 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _chi2(a, b):
    if np.any(a < 0) or np.any(b < 0):
        raise DataError("chi-squared distance requires non-negative entries")
    diff = a - b
    return float(np.sum(diff * diff / (a + b + CHI2_EPS)))


def _euclidean(a, b):
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def _canberra(a, b):
    num = np.abs(a - b)
    den = np.abs(a) + np.abs(b)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(np.sum(terms))


_DISTANCES = {"chi2": _chi2, "euclidean": _euclidean, "canberra": _canberra}


def distance(kind: str, a, b) -> float:
    """Dispatch to chi2 / euclidean / canberra; all are symmetric with d(a,a)=0."""
    if kind not in _DISTANCES:
        raise DataError(f"unknown distance kind {kind!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return _DISTANCES[kind](a, b)


def distance_to_similarity(d: float) -> float:
    """Rank-preserving distance-to-similarity conversion (negation)."""
    return -d


MEASURES = ("cosine", "chi2", "euclidean", "canberra")


def _row_scores(measure: str, p: np.ndarray, gallery: np.ndarray,
                gallery_norms: np.ndarray) -> np.ndarray:
    # one probe against the whole gallery; einsum keeps the reduction order
    # fixed so results do not depend on BLAS threading
    if measure == "cosine":
        dots = np.einsum("gd,d->g", gallery, p)
        pn = np.sqrt(np.dot(p, p))
        out = np.zeros(len(gallery))
        ok = (gallery_norms > 0) & (pn > 0)
        out[ok] = dots[ok] / (gallery_norms[ok] * pn)
        return out
    if measure == "euclidean":
        diff = gallery - p
        return -np.sqrt(np.einsum("gd,gd->g", diff, diff))
    if measure == "chi2":
        diff = gallery - p
        return -np.einsum("gd->g", diff * diff / (gallery + p + CHI2_EPS))
    if measure == "canberra":
        num = np.abs(gallery - p)
        den = np.abs(gallery) + np.abs(p)
        terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return -np.einsum("gd->g", terms)
    raise DataError(f"unknown measure {measure!r}")


def compute_similarity_matrix(
    probes: Sequence[FeatureVector],
    gallery: Sequence[FeatureVector],
    measure: str | Callable[[np.ndarray, np.ndarray], float] = "cosine",
    flip_variants: Mapping[str, FeatureVector] | None = None,
    flip_strategy: str = "max",
    threads: int = 1,
) -> SimilarityMatrix:
    """All-vs-all scoring of probes against a gallery.

    ``measure`` is one of MEASURES (distances are negated into similarities)
    or a callable returning a raw similarity. With ``flip_variants`` (map from
    probe image_id to the flipped-image feature), each entry combines the
    original and flipped probe scores with ``flip_strategy`` ("max" or "sum").
    """
    if not probes or not gallery:
        raise DataError("probes and gallery must be non-empty")
    if isinstance(measure, str) and measure not in MEASURES:
        raise DataError(f"unknown measure {measure!r}")
    if flip_strategy not in ("max", "sum"):
        raise DataError(f"unknown flip strategy {flip_strategy!r}")
    dims = {v.dim for v in probes} | {v.dim for v in gallery}
    probe_ids = [v.image_id for v in probes]
    gallery_ids = [v.image_id for v in gallery]
    if len(set(probe_ids)) != len(probe_ids) or len(set(gallery_ids)) != len(gallery_ids):
        raise DataError("duplicate image ids in probes or gallery")
    flips = None
    if flip_variants is not None:
        missing = [i for i in probe_ids if i not in flip_variants]
        if missing:
            raise DataError(f"missing flip variants for probes: {missing[:5]}")
        flips = [flip_variants[i] for i in probe_ids]
        dims |= {v.dim for v in flips}
    if len(dims) != 1:
        raise DataError(f"descriptor dimensions disagree: {sorted(dims)}")

    g_mat = np.stack([v.values for v in gallery])
    if isinstance(measure, str):
        if measure == "chi2":
            if np.any(g_mat < 0) or any(np.any(v.values < 0) for v in probes):
                raise DataError("chi-squared scoring requires non-negative features")
        g_norms = np.sqrt(np.einsum("gd,gd->g", g_mat, g_mat))

        def row(p):
            return _row_scores(measure, p, g_mat, g_norms)
    elif callable(measure):
        def row(p):
            return np.array([measure(p, g) for g in g_mat])
    else:
        raise DataError("measure must be a known name or a callable")

    combine = np.maximum if flip_strategy == "max" else np.add
    scores = np.zeros((len(probes), len(gallery)), dtype=np.float64)

    def fill(i):
        r = row(probes[i].values)
        if flips is not None:
            r = combine(r, row(flips[i].values))
        scores[i] = r

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(len(probes))))
    else:
        for i in range(len(probes)):
            fill(i)
    return SimilarityMatrix(tuple(probe_ids), tuple(gallery_ids), scores)


def minmax_normalize_rows(m: SimilarityMatrix) -> SimilarityMatrix:
    """Map each probe row into [0, 1] by min-max; constant rows become 0.5."""
    if m.shape[1] < 2:
        raise DataError("min-max normalization needs at least 2 gallery columns")
    s = m.scores.astype(np.float64)
    lo = s.min(axis=1, keepdims=True)
    hi = s.max(axis=1, keepdims=True)
    span = hi - lo
    flat = (span == 0.0)
    span[flat] = 1.0
    out = (s - lo) / span
    out[flat.ravel(), :] = 0.5
    return SimilarityMatrix(m.probe_ids, m.gallery_ids, out)


def fuse_sum(spec: FusionSpec) -> SimilarityMatrix:
    """Weighted sum-rule fusion; every component is min-max normalized first."""
    total = sum(w for _, w in spec.components)
    first = spec.components[0][0]
    acc = np.zeros(first.shape, dtype=np.float64)
    for m, w in spec.components:
        acc += w * minmax_normalize_rows(m).scores.astype(np.float64)
    return SimilarityMatrix(first.probe_ids, first.gallery_ids, acc / total)
