"""Batch command-line frontend.

Every subcommand is deterministic: identical inputs (and seeds) produce
byte-identical outputs, independent of the --threads setting. Exit codes:
0 success, 1 usage error, 2 data/validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import evaluation, matching, protocol, synth
from .errors import DataError
from .imagecore import load_grayscale
from .presets import DEFAULT_HEIGHT, DEFAULT_WIDTH, extract_with_preset, get_preset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("EARBENCH_THREADS", "1")))
    except ValueError:
        return 1


def _matrix_format(path: str) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix == ".esm1":
        return "binary"
    raise _UsageError(f"matrix output {path!r} must end in .esm1 or .csv")


def _resolve_image_path(manifest_path: str, record_path: str) -> Path:
    p = Path(record_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _cmd_extract(args) -> int:
    manifest = protocol.load_manifest(args.manifest)
    preset = get_preset(args.preset)
    if args.probes_only:
        records = protocol.derive_probes(manifest, args.split)
        if not records:
            raise DataError(f"split {args.split!r} has no probe-eligible records")
    else:
        records = manifest.in_split(args.split)
        if not records:
            raise DataError(f"split {args.split!r} has no records")
    vectors = [None] * len(records)

    def work(i):
        rec = records[i]
        img = load_grayscale(_resolve_image_path(args.manifest, rec.path))
        vectors[i] = extract_with_preset(img, preset, rec.image_id,
                                         width=args.width, height=args.height,
                                         flip=args.flip)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(work, range(len(records))))
    else:
        for i in range(len(records)):
            work(i)
    protocol.write_features(args.out, vectors)
    return EXIT_OK


def _cmd_score(args) -> int:
    fmt = _matrix_format(args.out)
    probes = protocol.read_features(args.probe_features)
    gallery = protocol.read_features(args.gallery_features)
    flips = None
    if args.flip_features:
        flips = {v.image_id: v for v in protocol.read_features(args.flip_features)}
    m = matching.compute_similarity_matrix(
        probes, gallery, measure=args.measure, flip_variants=flips,
        flip_strategy=args.flip_strategy, threads=args.threads)
    protocol.write_matrix(args.out, m, format=fmt)
    return EXIT_OK


def _cmd_fuse(args) -> int:
    fmt = _matrix_format(args.out)
    paths = [p for p in args.inputs.split(",") if p]
    if not paths:
        raise _UsageError("--inputs must name at least one matrix")
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise _UsageError(f"bad --weights {args.weights!r}") from None
        if len(weights) != len(paths):
            raise _UsageError("--weights count must match --inputs count")
    else:
        weights = [1.0] * len(paths)
    components = tuple((protocol.read_matrix(p), w) for p, w in zip(paths, weights))
    fused = matching.fuse_sum(matching.FusionSpec(components))
    protocol.write_matrix(args.out, fused, format=fmt)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    m = protocol.read_matrix(args.matrix)
    manifest = protocol.load_manifest(args.manifest)
    report = evaluation.evaluate(m, manifest)
    Path(args.report).write_text(report.to_json())
    if args.cmc_csv:
        with open(args.cmc_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "normalized_rank", "hit_rate"])
            for r, hit in enumerate(report.curve.hits, start=1):
                writer.writerow([r, f"{r / report.curve.max_rank:.9g}",
                                 f"{hit:.9g}"])
    print(f"rank1={report.rank1:.6f} rank5={report.rank5:.6f} "
          f"auc={report.auc:.6f} probes={report.probe_count}")
    return EXIT_OK


def _cmd_stratify(args) -> int:
    m = protocol.read_matrix(args.matrix)
    manifest = protocol.load_manifest(args.manifest)
    report = evaluation.evaluate(m, manifest, strata_key=args.key)
    Path(args.report).write_text(report.to_json())
    for label, res in sorted(report.strata.items()):
        print(f"{args.key}={label}: probes={res.probe_count} "
              f"rank1={res.rank1:.6f}")
    return EXIT_OK


def _cmd_inject_noise(args) -> int:
    manifest = protocol.load_manifest(args.manifest)
    noisy, record = protocol.inject_label_noise(manifest, args.fraction, args.seed)
    protocol.write_manifest(args.out, noisy)
    Path(args.ledger).write_text(record.to_json())
    print(f"swapped={len(record.swaps)}")
    return EXIT_OK


def _cmd_check_noise(args) -> int:
    m = protocol.read_matrix(args.matrix)
    manifest = protocol.load_manifest(args.manifest)
    noise = protocol.NoiseRecord.from_json(Path(args.ledger).read_text())
    report = protocol.check_noise_compliance(m, noise, manifest,
                                             threshold=args.threshold)
    sys.stdout.write(report.to_json())
    return EXIT_OK


def _cmd_validate(args) -> int:
    m = protocol.read_matrix(args.matrix)
    manifest = protocol.load_manifest(args.manifest)
    gallery = [r.image_id for r in manifest.in_split(args.split)]
    probes = [r.image_id for r in protocol.derive_probes(manifest, args.split)]
    report = protocol.validate_matrix(m, probes, gallery)
    sys.stdout.write(report.to_json())
    return EXIT_OK if report.ok else EXIT_DATA


def _cmd_qualitative(args) -> int:
    m = protocol.read_matrix(args.matrix)
    manifest = protocol.load_manifest(args.manifest)
    report = evaluation.qualitative_retrieval(m, manifest, args.probe, k=args.k)
    sys.stdout.write(report.to_json())
    return EXIT_OK


def _cmd_synth(args) -> int:
    synth.generate_dataset(args.out, args.subjects, args.images_per, args.seed,
                           width=args.width, height=args.height)
    print(f"wrote {args.subjects * args.images_per} images to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="earbench",
                     description="ear-identification evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker threads (never changes output bytes)")

    p = sub.add_parser("extract", help="extract preset features for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--flip", action="store_true",
                   help="extract from horizontally flipped images")
    p.add_argument("--probes-only", action="store_true",
                   help="restrict to probe-eligible records (subjects with "
                        ">= 2 images in the split)")
    p.add_argument("--width", type=int, default=DEFAULT_WIDTH)
    p.add_argument("--height", type=int, default=DEFAULT_HEIGHT)
    add_threads(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("score", help="all-vs-all similarity matrix")
    p.add_argument("--probe-features", required=True)
    p.add_argument("--gallery-features", required=True)
    p.add_argument("--measure", required=True,
                   choices=list(matching.MEASURES))
    p.add_argument("--flip-features", default=None)
    p.add_argument("--flip-strategy", default="max", choices=["max", "sum"])
    p.add_argument("--out", required=True)
    add_threads(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("fuse", help="weighted sum-rule fusion of matrices")
    p.add_argument("--inputs", required=True, help="comma-separated matrix files")
    p.add_argument("--weights", default=None, help="comma-separated weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("evaluate", help="CMC / rank-k / AUC report")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--cmc-csv", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stratify", help="covariate-stratified rank-1 report")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--key", required=True,
                   help="annotation key, or 'resolution' for pixel buckets")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_stratify)

    p = sub.add_parser("inject-noise", help="seeded label noise for the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ledger", required=True)
    p.set_defaults(func=_cmd_inject_noise)

    p = sub.add_parser("check-noise", help="label-noise compliance check")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True, help="the noisy manifest")
    p.add_argument("--ledger", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_check_noise)

    p = sub.add_parser("validate", help="check a matrix against the protocol")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("qualitative", help="top-k retrieval report for one probe")
    p.add_argument("--matrix", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("-k", type=int, default=2)
    p.set_defaults(func=_cmd_qualitative)

    p = sub.add_parser("synth", help="deterministic synthetic dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--images-per", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=128)
    p.set_defaults(func=_cmd_synth)

    return parser


def _fail(category: str, exc: Exception, code: int) -> int:
    message = " ".join(str(exc).split())     # keep the error on one line
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ValueError as exc:          # DataError and stray parse errors
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
