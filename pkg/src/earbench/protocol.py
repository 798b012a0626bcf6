"""Dataset manifests, probe derivation, label-noise tooling, and bit-exact
file formats for features (EFV1) and similarity matrices (ESM1 / CSV).

Manifest files are CSV with the header
``image_id,path,subject_id,split,width,height`` followed by optional
annotation columns, or an equivalent JSON document. Splits are data-driven;
nothing about the dataset composition is hardcoded.
"""

from __future__ import annotations

import csv
import json
import math
import random
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .descriptors import FeatureVector
from .errors import DataError, FormatError
from .matching import SimilarityMatrix

SPLITS = ("train", "test", "sequestered")
_BASE_COLUMNS = ("image_id", "path", "subject_id", "split", "width", "height")

FEATURE_MAGIC = b"EFV1"
MATRIX_MAGIC = b"ESM1"


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    subject_id: str
    split: str
    width: int | None = None
    height: int | None = None
    annotations: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"record {self.image_id!r}: unknown split {self.split!r}")
        for name in ("width", "height"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise DataError(f"record {self.image_id!r}: {name} must be positive")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise DataError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)
        train = {r.subject_id for r in self.records if r.split == "train"}
        test = {r.subject_id for r in self.records if r.split == "test"}
        overlap = sorted(train & test)
        if overlap:
            raise DataError(
                f"subjects present in both train and test splits: {overlap[:5]}")

    def in_split(self, split: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == split]

    def record(self, image_id: str) -> ImageRecord:
        try:
            return self._index()[image_id]
        except KeyError:
            raise DataError(f"unknown image_id {image_id!r}") from None

    def subject_of(self, image_id: str) -> str:
        return self.record(image_id).subject_id

    def _index(self) -> dict[str, ImageRecord]:
        idx = getattr(self, "_idx", None)
        if idx is None:
            idx = {r.image_id: r for r in self.records}
            object.__setattr__(self, "_idx", idx)
        return idx

    @property
    def annotation_keys(self) -> list[str]:
        keys: list[str] = []
        for r in self.records:
            for k in r.annotations:
                if k not in keys:
                    keys.append(k)
        return keys


@dataclass(frozen=True)
class NoiseRecord:
    """Ledger of seeded label swaps; sufficient to restore the original manifest."""

    seed: int
    swaps: tuple[tuple[str, str, str], ...]   # (image_id, original, assigned)

    def __post_init__(self):
        ids = [s[0] for s in self.swaps]
        if len(set(ids)) != len(ids):
            raise DataError("swapped image_ids must be distinct")
        if any(orig == assigned for _, orig, assigned in self.swaps):
            raise DataError("a swap must assign a different subject")

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed,
             "swaps": [{"image_id": i, "original_subject": o, "assigned_subject": a}
                       for i, o, a in self.swaps]},
            indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NoiseRecord":
        try:
            doc = json.loads(text)
            return cls(seed=int(doc["seed"]),
                       swaps=tuple((s["image_id"], s["original_subject"],
                                    s["assigned_subject"]) for s in doc["swaps"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed noise ledger: {exc}") from None


# ---------------------------------------------------------------------------
# manifest I/O


def _parse_dim(token: str, line_no: int, name: str):
    if token == "":
        return None
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"line {line_no}: {name} must be an integer, "
                          f"got {token!r}") from None


def load_manifest(path) -> DatasetManifest:
    """Load a CSV or JSON manifest and validate its invariants."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text())
            records = []
            for r in doc["records"]:
                records.append(ImageRecord(
                    image_id=r["image_id"], path=r["path"],
                    subject_id=r["subject_id"], split=r["split"],
                    width=r.get("width"), height=r.get("height"),
                    annotations=dict(r.get("annotations", {}))))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed JSON manifest: {exc}") from None
        return DatasetManifest(tuple(records), name=doc.get("name", path.stem))

    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest") from None
        if tuple(header[:6]) != _BASE_COLUMNS:
            raise FormatError(f"{path}: manifest header must start with "
                              f"{','.join(_BASE_COLUMNS)}")
        ann_keys = header[6:]
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {line_no}: expected "
                                  f"{len(header)} fields, got {len(row)}")
            image_id, img_path, subject, split, w, h = row[:6]
            if not image_id or not subject:
                raise FormatError(f"{path}: line {line_no}: empty image_id "
                                  "or subject_id")
            annotations = {k: v for k, v in zip(ann_keys, row[6:]) if v != ""}
            try:
                records.append(ImageRecord(
                    image_id=image_id, path=img_path, subject_id=subject,
                    split=split, width=_parse_dim(w, line_no, "width"),
                    height=_parse_dim(h, line_no, "height"),
                    annotations=annotations))
            except DataError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc}") from None
    return DatasetManifest(tuple(records), name=path.stem)


def write_manifest(path, m: DatasetManifest) -> None:
    """Write a manifest in the format implied by the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {"name": m.name, "records": [
            {"image_id": r.image_id, "path": r.path, "subject_id": r.subject_id,
             "split": r.split, "width": r.width, "height": r.height,
             "annotations": r.annotations} for r in m.records]}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return
    keys: list[str] = []
    for r in m.records:
        for k in r.annotations:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(_BASE_COLUMNS) + keys)
        for r in m.records:
            writer.writerow(
                [r.image_id, r.path, r.subject_id, r.split,
                 "" if r.width is None else r.width,
                 "" if r.height is None else r.height]
                + [r.annotations.get(k, "") for k in keys])


# ---------------------------------------------------------------------------
# protocol operations


def derive_probes(m: DatasetManifest, split: str) -> list[ImageRecord]:
    """Records of the split whose subject has >= 2 images in that split.

    The gallery of an experiment is every record of the split, so the probe
    set is always a gallery subset.
    """
    records = m.in_split(split)
    if not records:
        raise DataError(f"split {split!r} has no records")
    counts: dict[str, int] = {}
    for r in records:
        counts[r.subject_id] = counts.get(r.subject_id, 0) + 1
    return [r for r in records if counts[r.subject_id] >= 2]


def inject_label_noise(m: DatasetManifest, fraction: float,
                       seed: int) -> tuple[DatasetManifest, NoiseRecord]:
    """Relabel a seeded random ceil(fraction * |test|) of test records, each to
    a different, uniformly drawn test subject."""
    if not (0.0 < fraction < 1.0):
        raise DataError(f"noise fraction must lie in (0, 1), got {fraction}")
    test_idx = [i for i, r in enumerate(m.records) if r.split == "test"]
    subjects = sorted({m.records[i].subject_id for i in test_idx})
    if len(subjects) < 2:
        raise DataError("label noise needs at least 2 test subjects")
    count = math.ceil(fraction * len(test_idx))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(test_idx, count))
    new_records = list(m.records)
    swaps = []
    for i in chosen:
        rec = m.records[i]
        others = [s for s in subjects if s != rec.subject_id]
        assigned = rng.choice(others)
        swaps.append((rec.image_id, rec.subject_id, assigned))
        new_records[i] = replace(rec, subject_id=assigned)
    noisy = DatasetManifest(tuple(new_records), name=m.name)
    return noisy, NoiseRecord(seed=seed, swaps=tuple(swaps))


def restore_labels(noisy: DatasetManifest, noise: NoiseRecord) -> DatasetManifest:
    """Undo inject_label_noise using its swap ledger."""
    originals = {i: o for i, o, _ in noise.swaps}
    records = tuple(
        replace(r, subject_id=originals[r.image_id]) if r.image_id in originals else r
        for r in noisy.records)
    return DatasetManifest(records, name=noisy.name)


@dataclass(frozen=True)
class ComplianceReport:
    """Per-probe outcome of the label-noise check."""

    entries: tuple[dict, ...]      # image_id, rank_true, rank_false, suspicious
    evaluated: int
    skipped: tuple[str, ...]
    suspicious_fraction: float
    threshold: float
    flagged: bool

    def to_json(self) -> str:
        return json.dumps(
            {"entries": list(self.entries), "evaluated": self.evaluated,
             "skipped": list(self.skipped),
             "suspicious_fraction": self.suspicious_fraction,
             "threshold": self.threshold, "flagged": self.flagged},
            indent=2, sort_keys=True) + "\n"


def check_noise_compliance(matrix: SimilarityMatrix, noise: NoiseRecord,
                           m: DatasetManifest, threshold: float = 0.5) -> ComplianceReport:
    """Flag submissions whose scores track the injected (false) labels.

    For each relabeled probe the identity-level rank of the falsely assigned
    subject is compared with the rank of the true subject; if the false
    subject outranks the true one for more than ``threshold`` of the noisy
    probes, the matrix is flagged. ``m`` must be the noisy manifest.
    """
    from .evaluation import identity_rank   # local import to avoid a cycle

    probe_set = set(matrix.probe_ids)
    entries = []
    skipped = []
    for image_id, original, assigned in noise.swaps:
        if image_id not in probe_set:
            raise DataError(f"noisy probe {image_id!r} missing from the matrix")
        try:
            rank_false = identity_rank(matrix, image_id, m, assigned)
            rank_true = identity_rank(matrix, image_id, m, original)
        except DataError:
            skipped.append(image_id)
            continue
        entries.append({"image_id": image_id, "rank_true": rank_true,
                        "rank_false": rank_false,
                        "suspicious": rank_false < rank_true})
    if not entries:
        raise DataError("no evaluable noisy probes in matrix scope")
    frac = sum(e["suspicious"] for e in entries) / len(entries)
    return ComplianceReport(entries=tuple(entries), evaluated=len(entries),
                            skipped=tuple(skipped), suspicious_fraction=frac,
                            threshold=threshold, flagged=frac > threshold)


# ---------------------------------------------------------------------------
# feature files (EFV1)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: bad string field: {exc}") from None


def write_features(path, vectors: list[FeatureVector]) -> None:
    """Serialize vectors to the EFV1 binary format (32-bit little-endian values)."""
    if vectors:
        dims = {v.dim for v in vectors}
        descs = {v.descriptor_id for v in vectors}
        if len(dims) != 1:
            raise DataError(f"feature dimensions disagree: {sorted(dims)}")
        if len(descs) != 1:
            raise DataError(f"descriptor ids disagree: {sorted(descs)}")
        desc, dim = vectors[0].descriptor_id, vectors[0].dim
    else:
        desc, dim = "", 0
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_pack_str(desc))
        fh.write(struct.pack("<II", dim, len(vectors)))
        for v in vectors:
            fh.write(_pack_str(v.image_id))
            fh.write(np.asarray(v.values, dtype="<f4").tobytes())


def read_features(path) -> list[FeatureVector]:
    """Read an EFV1 file back into FeatureVectors (values exactly as stored)."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != FEATURE_MAGIC:
        raise FormatError(f"{path}: not an EFV1 feature file (bad magic)")
    desc = r.string()
    dim = r.u32()
    count = r.u32()
    out = []
    for _ in range(count):
        image_id = r.string()
        values = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float64)
        out.append(FeatureVector(desc, image_id, values))
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# similarity-matrix files (ESM1 / CSV)


def write_matrix(path, m: SimilarityMatrix, format: str = "binary") -> None:
    """Write a matrix as ESM1 binary or CSV (9 significant digits)."""
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(MATRIX_MAGIC)
            fh.write(struct.pack("<II", *m.shape))
            for i in m.probe_ids:
                fh.write(_pack_str(i))
            for g in m.gallery_ids:
                fh.write(_pack_str(g))
            fh.write(np.ascontiguousarray(m.scores, dtype="<f4").tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([""] + list(m.gallery_ids))
            for pid, row in zip(m.probe_ids, m.scores):
                writer.writerow([pid] + [f"{x:.9g}" for x in row])
    else:
        raise DataError(f"unknown matrix format {format!r}")


def read_matrix(path) -> SimilarityMatrix:
    """Read an ESM1 or CSV matrix file (sniffed by magic bytes)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MATRIX_MAGIC:
        r = _Reader(path.read_bytes(), path)
        r.take(4)
        rows, cols = r.u32(), r.u32()
        probe_ids = tuple(r.string() for _ in range(rows))
        gallery_ids = tuple(r.string() for _ in range(cols))
        scores = np.frombuffer(r.take(4 * rows * cols), dtype="<f4")
        if r.pos != len(r.data):
            raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
        if not np.all(np.isfinite(scores)):
            bad = int(np.flatnonzero(~np.isfinite(scores))[0])
            raise FormatError(
                f"{path}: non-finite score for probe "
                f"{probe_ids[bad // cols]!r}, gallery {gallery_ids[bad % cols]!r}")
        return SimilarityMatrix(probe_ids, gallery_ids,
                                scores.reshape(rows, cols))

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty matrix file") from None
        gallery_ids = tuple(header[1:])
        probe_ids = []
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}: line {line_no}: expected "
                                  f"{len(header)} fields, got {len(row)}")
            probe_ids.append(row[0])
            try:
                values = np.array([np.float32(x) for x in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc}") from None
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise FormatError(
                    f"{path}: non-finite score for probe {row[0]!r}, "
                    f"gallery {gallery_ids[int(bad[0])]!r}")
            rows.append(values)
        if not rows:
            raise FormatError(f"{path}: matrix has no probe rows")
    return SimilarityMatrix(tuple(probe_ids), gallery_ids, np.stack(rows))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps({"ok": self.ok, "violations": list(self.violations)},
                          indent=2, sort_keys=True) + "\n"


def validate_matrix(m: SimilarityMatrix, expected_probes, expected_gallery) -> ValidationReport:
    """Organizer-side submission check: shape, exact id order, finiteness."""
    expected_probes = list(expected_probes)
    expected_gallery = list(expected_gallery)
    violations = []
    if m.shape != (len(expected_probes), len(expected_gallery)):
        violations.append(
            f"shape {m.shape[0]}x{m.shape[1]} does not match expected "
            f"{len(expected_probes)}x{len(expected_gallery)}")

    def check_ids(kind, got, want):
        got_set, want_set = set(got), set(want)
        for missing in sorted(want_set - got_set):
            violations.append(f"missing {kind} id {missing!r}")
        for extra in sorted(got_set - want_set):
            violations.append(f"unexpected {kind} id {extra!r}")
        if got_set == want_set and list(got) != list(want):
            violations.append(f"{kind} ids are out of order")

    check_ids("probe", m.probe_ids, expected_probes)
    check_ids("gallery", m.gallery_ids, expected_gallery)
    # SimilarityMatrix enforces finiteness at construction; re-check anyway
    if not np.all(np.isfinite(m.scores)):
        violations.append("matrix contains non-finite scores")
    return ValidationReport(tuple(violations))
