"""Identification metrics: CMC curves, rank-k rates, AUC, covariate-stratified
breakdowns and qualitative retrieval reports.

Ranking is identity-level: gallery images collapse to identities by maximum
score, the probe's own gallery column (same image_id) is excluded first, and
score ties break by ascending identity name. Image-level ranking is available
through ``level="image"`` where noted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .matching import SimilarityMatrix
from .protocol import DatasetManifest

RESOLUTION_KEY = "resolution"
UNLABELED = "unlabeled"
_BUCKETS = ((0, "<1k"), (1000, "1k–5k"), (5000, "5k–10k"), (10000, "≥10k"))


@dataclass(frozen=True)
class CmcCurve:
    """Cumulative match characteristic: hits[r-1] = fraction of probes whose
    true identity ranks within the top r."""

    max_rank: int
    hits: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.asarray(self.hits, dtype=np.float64)
        if h.shape != (self.max_rank,):
            raise DataError(f"curve length {h.shape} != max rank {self.max_rank}")
        h = h.copy()
        h.flags.writeable = False
        object.__setattr__(self, "hits", h)

    def at(self, rank: int) -> float:
        """Hit rate at a rank, clamped to the curve's last point."""
        return float(self.hits[min(rank, self.max_rank) - 1])


@dataclass(frozen=True)
class StratumResult:
    probe_count: int
    rank1: float


@dataclass(frozen=True)
class EvalReport:
    rank1: float
    rank5: float
    auc: float
    curve: CmcCurve
    probe_count: int
    strata: dict[str, StratumResult] | None = None

    def to_json(self) -> str:
        doc = {"rank1": self.rank1, "rank5": self.rank5, "auc": self.auc,
               "probe_count": self.probe_count, "max_rank": self.curve.max_rank,
               "cmc": [float(x) for x in self.curve.hits]}
        if self.strata is not None:
            doc["strata"] = {k: {"probe_count": v.probe_count, "rank1": v.rank1}
                             for k, v in self.strata.items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class _GalleryIndex:
    """Gallery bookkeeping shared by the per-probe ranking routines."""

    def __init__(self, matrix: SimilarityMatrix, manifest: DatasetManifest):
        self.matrix = matrix
        self.subjects = [manifest.subject_of(g) for g in matrix.gallery_ids]
        self.identities = sorted(set(self.subjects))
        self.ident_index = {s: i for i, s in enumerate(self.identities)}
        self.column_ident = np.array([self.ident_index[s] for s in self.subjects])
        self.column_of = {g: j for j, g in enumerate(matrix.gallery_ids)}
        self.row_of = {p: i for i, p in enumerate(matrix.probe_ids)}

    def identity_scores(self, probe_id: str) -> np.ndarray:
        """Per-identity max score for one probe, self column excluded;
        identities left without columns get -inf."""
        if probe_id not in self.row_of:
            raise DataError(f"probe {probe_id!r} missing from the matrix")
        row = self.matrix.scores[self.row_of[probe_id]]
        scores = row.astype(np.float64)
        keep = np.ones(len(scores), dtype=bool)
        if probe_id in self.column_of:
            keep[self.column_of[probe_id]] = False
        acc = np.full(len(self.identities), -np.inf)
        np.maximum.at(acc, self.column_ident[keep], scores[keep])
        return acc

    def rank_of(self, acc: np.ndarray, subject: str) -> int:
        if subject not in self.ident_index:
            raise DataError(f"identity {subject!r} not present in the gallery")
        t = self.ident_index[subject]
        if acc[t] == -np.inf:
            raise DataError(f"identity {subject!r} has no gallery image left "
                            "after self-exclusion")
        better = acc > acc[t]
        # ties break by ascending identity name; identities are name-sorted
        better[:t] |= acc[:t] == acc[t]
        better[t] = False
        return int(np.count_nonzero(better)) + 1


def identity_rank(matrix: SimilarityMatrix, probe_id: str,
                  manifest: DatasetManifest, subject: str) -> int:
    """1-based identity-level rank of ``subject`` for one probe."""
    gi = _GalleryIndex(matrix, manifest)
    return gi.rank_of(gi.identity_scores(probe_id), subject)


def rank_of_true_identity(matrix: SimilarityMatrix, probe_id: str,
                          manifest: DatasetManifest, level: str = "identity") -> int:
    """Rank of the probe's own identity (or of its first correct image with
    ``level="image"``)."""
    subject = manifest.subject_of(probe_id)
    if level == "identity":
        return identity_rank(matrix, probe_id, manifest, subject)
    if level != "image":
        raise DataError(f"unknown ranking level {level!r}")
    order = _image_ranking(matrix, probe_id)
    for pos, j in enumerate(order, start=1):
        if manifest.subject_of(matrix.gallery_ids[j]) == subject:
            return pos
    raise DataError(f"identity {subject!r} has no gallery image left "
                    "after self-exclusion")


def _image_ranking(matrix: SimilarityMatrix, probe_id: str) -> list[int]:
    # gallery column indices sorted by descending score, then ascending id,
    # with the probe's own column removed
    try:
        row = matrix.scores[matrix.probe_ids.index(probe_id)]
    except ValueError:
        raise DataError(f"probe {probe_id!r} missing from the matrix") from None
    cols = [j for j, g in enumerate(matrix.gallery_ids) if g != probe_id]
    return sorted(cols, key=lambda j: (-float(row[j]), matrix.gallery_ids[j]))


def _probe_ranks(matrix: SimilarityMatrix, manifest: DatasetManifest):
    """(probe_id, rank) for each rankable probe; probes whose identity is
    absent after self-exclusion are skipped."""
    gi = _GalleryIndex(matrix, manifest)
    ranks = []
    for probe_id in matrix.probe_ids:
        subject = manifest.subject_of(probe_id)
        acc = gi.identity_scores(probe_id)
        if subject not in gi.ident_index or acc[gi.ident_index[subject]] == -np.inf:
            continue
        ranks.append((probe_id, gi.rank_of(acc, subject)))
    return ranks, len(gi.identities)


def compute_cmc(matrix: SimilarityMatrix, manifest: DatasetManifest) -> CmcCurve:
    """CMC over all rankable probes; max rank = distinct gallery identities."""
    ranks, n_ident = _probe_ranks(matrix, manifest)
    if not ranks:
        raise DataError("no valid probes: no probe identity exists in the "
                        "gallery after self-exclusion")
    counts = np.bincount([r for _, r in ranks], minlength=n_ident + 1)[1:]
    hits = np.cumsum(counts) / len(ranks)
    return CmcCurve(max_rank=n_ident, hits=hits)


def auc(curve: CmcCurve) -> float:
    """Area under the CMC with the rank axis normalized to 1 (mean hit rate)."""
    return float(np.mean(curve.hits))


def evaluate(matrix: SimilarityMatrix, manifest: DatasetManifest,
             strata_key: str | None = None) -> EvalReport:
    """Full scalar report; optionally adds a stratified rank-1 breakdown."""
    ranks, n_ident = _probe_ranks(matrix, manifest)
    if not ranks:
        raise DataError("no valid probes for evaluation")
    curve = compute_cmc(matrix, manifest)
    strata = stratified_eval(matrix, manifest, strata_key) if strata_key else None
    return EvalReport(rank1=curve.at(1), rank5=curve.at(5), auc=auc(curve),
                      curve=curve, probe_count=len(ranks), strata=strata)


def resolution_buckets(m: DatasetManifest) -> dict[str, str]:
    """Pixel-count buckets usable as a virtual annotation key.

    Buckets are inclusive-lower: [0,1k) [1k,5k) [5k,10k) [10k,inf); records
    without dimensions map to the "unlabeled" stratum.
    """
    out = {}
    for r in m.records:
        if r.width is None or r.height is None:
            out[r.image_id] = UNLABELED
            continue
        pixels = r.width * r.height
        label = _BUCKETS[0][1]
        for lower, name in _BUCKETS:
            if pixels >= lower:
                label = name
        out[r.image_id] = label
    return out


def stratified_eval(matrix: SimilarityMatrix, manifest: DatasetManifest,
                    key: str) -> dict[str, StratumResult]:
    """Partition probes by an annotation value and report per-stratum rank-1.

    ``key="resolution"`` derives labels from image pixel counts. Probes
    without the key fall into the "unlabeled" stratum; every stratum is ranked
    against the full gallery.
    """
    if key == RESOLUTION_KEY:
        labels = resolution_buckets(manifest)

        def label_of(pid):
            return labels.get(pid, UNLABELED)
    else:
        def label_of(pid):
            return manifest.record(pid).annotations.get(key, UNLABELED)

    ranks, _ = _probe_ranks(matrix, manifest)
    if not ranks:
        raise DataError("no valid probes for stratified evaluation")
    if all(label_of(pid) == UNLABELED for pid, _ in ranks):
        raise DataError(f"annotation key {key!r} present on zero probes")
    groups: dict[str, list[int]] = {}
    for pid, rank in ranks:
        groups.setdefault(label_of(pid), []).append(rank)
    return {label: StratumResult(probe_count=len(rs),
                                 rank1=sum(r == 1 for r in rs) / len(rs))
            for label, rs in sorted(groups.items())}


@dataclass(frozen=True)
class RetrievalReport:
    """Top-k retrieved gallery images for one probe, plus the first correct hit."""

    probe_id: str
    matches: tuple[tuple[str, float], ...]
    first_correct_id: str
    first_correct_rank: int

    def to_json(self) -> str:
        return json.dumps(
            {"probe_id": self.probe_id,
             "matches": [{"image_id": g, "score": s} for g, s in self.matches],
             "first_correct_id": self.first_correct_id,
             "first_correct_rank": self.first_correct_rank},
            indent=2, sort_keys=True) + "\n"


def qualitative_retrieval(matrix: SimilarityMatrix, manifest: DatasetManifest,
                          probe_id: str, k: int = 2) -> RetrievalReport:
    """Image-level top-k matches (self-excluded) and the rank of the first
    gallery image with the probe's identity."""
    subject = manifest.subject_of(probe_id)
    order = _image_ranking(matrix, probe_id)
    row = matrix.scores[matrix.probe_ids.index(probe_id)]
    matches = tuple((matrix.gallery_ids[j], float(row[j])) for j in order[:k])
    for pos, j in enumerate(order, start=1):
        if manifest.subject_of(matrix.gallery_ids[j]) == subject:
            return RetrievalReport(probe_id=probe_id, matches=matches,
                                   first_correct_id=matrix.gallery_ids[j],
                                   first_correct_rank=pos)
    raise DataError(f"identity {subject!r} has no gallery image left "
                    "after self-exclusion")
