"""Acceptance suite: one test per release criterion, each printing a PASS line.

Run with  pytest tests/test_acceptance.py -v -s  to see the per-criterion
lines. Every tolerance is pinned here; nothing is deferred to calibration.
"""

import contextlib
import io
import json
import time

import numpy as np
import pytest

from earbench import descriptors as d
from earbench import evaluation as ev
from earbench import protocol as pr
from earbench import wavelet
from earbench.cli import EXIT_OK, main
from earbench.descriptors import FeatureVector
from earbench.errors import DataError
from earbench.imagecore import GrayImage
from earbench.matching import (FusionSpec, SimilarityMatrix, fuse_sum,
                               minmax_normalize_rows)

from test_evaluation import oracle_cmc, oracle_rank, random_case


def ok(name):
    print(f"ACCEPTANCE {name}: PASS")


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestAcceptance:

    def test_cmc_oracle_equivalence(self):
        """compute_cmc / rank_of_true_identity / auc match the naive
        sort-and-scan oracle exactly on 200 seeded cases, in under 10 s."""
        t0 = time.time()
        checked_curves = 0
        checked_ranks = 0
        for seed in range(200):
            matrix, manifest = random_case(seed, max_probes=20,
                                           max_gallery=50, max_idents=10)
            for p in matrix.probe_ids:
                want = oracle_rank(matrix, p, manifest)
                if want is None:
                    with pytest.raises(DataError):
                        ev.rank_of_true_identity(matrix, p, manifest)
                else:
                    got = ev.rank_of_true_identity(matrix, p, manifest)
                    assert got == want, (seed, p, got, want)
                    checked_ranks += 1
            try:
                curve = ev.compute_cmc(matrix, manifest)
            except DataError:
                continue
            want_hits = oracle_cmc(matrix, manifest)
            assert np.array_equal(curve.hits, want_hits), seed
            assert ev.auc(curve) == float(np.mean(want_hits)), seed
            checked_curves += 1
        elapsed = time.time() - t0
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
        assert checked_curves >= 190 and checked_ranks > 1000
        ok(f"cmc-oracle-equivalence ({checked_curves} curves, "
           f"{checked_ranks} ranks, {elapsed:.1f}s)")

    def test_metric_invariants(self):
        """1,000 randomized trials: monotone CMC, terminal 1.0, rank1<=rank5,
        auc in [0,1], invariance under strictly increasing row transforms."""
        rng = np.random.default_rng(314)
        trials = 0
        seed = 0
        while trials < 1000:
            seed += 1
            matrix, manifest = random_case(seed + 10_000, max_probes=8,
                                           max_gallery=20, max_idents=6)
            try:
                report = ev.evaluate(matrix, manifest)
            except DataError:
                continue
            hits = report.curve.hits
            assert np.all(np.diff(hits) >= 0)
            assert np.all((hits >= 0.0) & (hits <= 1.0))
            assert hits[-1] == 1.0          # probe identities are covered here
            assert report.rank1 <= report.rank5 <= 1.0
            assert 0.0 <= report.auc <= 1.0
            # per-row strictly increasing transform preserves every metric
            s = matrix.scores.astype(np.float64)
            k = rng.uniform(0.5, 3.0, size=(s.shape[0], 1))
            c = rng.uniform(-1.0, 1.0, size=(s.shape[0], 1))
            warped = SimilarityMatrix(matrix.probe_ids, matrix.gallery_ids,
                                      np.exp(k * s) + c)
            wreport = ev.evaluate(warped, manifest)
            assert np.array_equal(report.curve.hits, wreport.curve.hits)
            assert report.auc == wreport.auc
            trials += 1
        ok(f"metric-invariants ({trials} trials, zero violations)")

    def test_wavelet_correctness(self):
        """Perfect reconstruction < 1e-8 over dims 8..64 and levels 1..4;
        constant-image details < 1e-10; bior descriptor dim exactly 72."""
        rng = np.random.default_rng(271)
        for trial in range(60):
            h = int(rng.integers(8, 65))
            w = int(rng.integers(8, 65))
            lv = 1
            while min(h, w) >= 2 ** (lv + 1) and lv < 4:
                lv += 1
            lv = int(rng.integers(1, lv + 1))
            x = rng.standard_normal((h, w)) * 200
            err = np.abs(wavelet.idwt2(wavelet.dwt2(x, levels=lv)) - x).max()
            assert err < 1e-8, (h, w, lv, err)
        dec = wavelet.dwt2(np.full((32, 32), 173.0), levels=4)
        for hh, vv, dd in dec.details:
            for band in (hh, vv, dd):
                assert np.abs(band).max() < 1e-10
        img = GrayImage(np.random.default_rng(1).integers(
            0, 256, (128, 96), dtype=np.uint8))
        assert d.extract_bior_energy(img).dim == 72
        ok("wavelet-correctness (PR<1e-8, const<1e-10, dim=72)")

    def test_descriptor_dimension_formulas(self):
        """Dimension formulas and constant-image contracts for every descriptor."""
        rng = np.random.default_rng(828)
        img = GrayImage(rng.integers(0, 256, (128, 96), dtype=np.uint8))
        fv = d.extract_ulbp(img, d.LbpParams())
        patches = ((96 - 16) // 4 + 1) * ((128 - 16) // 4 + 1)
        assert patches == 609
        assert fv.dim == patches * 59 == 35931
        assert d.extract_phog(img, d.PhogParams()).dim == 168
        assert d.extract_iflbp(img).dim == 256
        # constant-image contracts
        const = GrayImage(np.full((64, 48), 99, dtype=np.uint8))
        ulbp_one_patch = d.extract_ulbp(
            GrayImage(np.full((16, 16), 99, dtype=np.uint8)), d.LbpParams())
        hist = ulbp_one_patch.values
        assert np.count_nonzero(hist) == 1 and hist.sum() == 144.0
        iflbp = d.extract_iflbp(const)
        assert np.abs(iflbp.values - 1.0 / 256.0).max() < 1e-9
        assert np.all(d.extract_phog(const).values == 0.0)
        assert np.abs(d.extract_bior_energy(const).values).max() < 1e-10
        ok("descriptor-dimension-formulas (ulbp 35931, phog 168, iflbp 256)")

    def test_iflbp_crisp_limit(self):
        """F=1e-6 on images whose neighbor differences all have |d|>=1
        reproduces the crisp 256-bin LBP histogram exactly."""
        for seed in (5, 6, 7):
            rng = np.random.default_rng(seed)
            vals = rng.choice(256, size=144, replace=False).astype(np.uint8)
            img = GrayImage(vals.reshape(12, 12))
            diffs = []
            src = vals.reshape(12, 12).astype(int)
            for dy, dx in d._IFLBP_OFFSETS:
                diffs.append(np.abs(src[1+dy:11+dy, 1+dx:11+dx]
                                    - src[1:11, 1:11]).min())
            assert min(diffs) >= 1
            fuzzy = d.extract_iflbp(img, d.IflbpParams(fuzz_width=1e-6))
            crisp = d.crisp_lbp_histogram(img)
            assert np.array_equal(fuzzy.values, crisp)
        ok("iflbp-crisp-limit (exact match, 3 seeds)")

    def test_fusion_contracts(self):
        """Degenerate weights, rescaling argmax invariance, constant rows."""
        rng = np.random.default_rng(55)

        def matrix(scores):
            scores = np.asarray(scores, dtype=np.float64)
            return SimilarityMatrix(
                tuple(f"p{i}" for i in range(scores.shape[0])),
                tuple(f"g{j}" for j in range(scores.shape[1])), scores)

        a = matrix(rng.normal(size=(7, 9)))
        b = matrix(rng.normal(size=(7, 9)))
        degenerate = fuse_sum(FusionSpec(((a, 1.0), (b, 0.0))))
        assert np.array_equal(degenerate.scores,
                              minmax_normalize_rows(a).scores)
        for scale in (0.5, 3.0, 100.0):
            scaled = fuse_sum(FusionSpec(
                ((matrix(a.scores.astype(np.float64) * scale), 1.0), (b, 1.0))))
            base = fuse_sum(FusionSpec(((a, 1.0), (b, 1.0))))
            assert np.array_equal(base.scores.argmax(axis=1),
                                  scaled.scores.argmax(axis=1))
        const = matrix(np.full((3, 4), 2.5))
        assert np.all(minmax_normalize_rows(const).scores == 0.5)
        ok("fusion-contracts (zero tolerance)")

    def test_end_to_end_synthetic_identification(self, tmp_path):
        """synth 20x5 seed 1 (chance rank-1 = 5%): lbp-base >= 50% and
        bior >= 25% rank-1, end to end through the CLI, under 60 s."""
        t0 = time.time()
        data = tmp_path / "ds"
        assert run_cli("synth", "--subjects", 20, "--images-per", 5,
                       "--seed", 1, "--out", data) == EXIT_OK
        rank1 = {}
        for preset, measure, floor in (("lbp-base", "cosine", 0.50),
                                       ("bior", "canberra", 0.25)):
            feats = tmp_path / f"{preset}.efv1"
            matrix = tmp_path / f"{preset}.esm1"
            report = tmp_path / f"{preset}.json"
            assert run_cli("extract", "--manifest", data / "manifest.csv",
                           "--preset", preset, "--split", "test",
                           "--out", feats) == EXIT_OK
            assert run_cli("score", "--probe-features", feats,
                           "--gallery-features", feats, "--measure", measure,
                           "--out", matrix) == EXIT_OK
            assert run_cli("evaluate", "--matrix", matrix, "--manifest",
                           data / "manifest.csv", "--report", report,
                           "--cmc-csv", tmp_path / f"{preset}_cmc.csv") == EXIT_OK
            doc = json.loads(report.read_text())
            rank1[preset] = doc["rank1"]
            assert doc["rank1"] >= floor, (preset, doc["rank1"])
            cmc_rows = (tmp_path / f"{preset}_cmc.csv").read_text().splitlines()
            assert len(cmc_rows) == 1 + 20   # header + one row per identity
        elapsed = time.time() - t0
        assert elapsed < 60.0, f"end-to-end took {elapsed:.1f}s"
        ok(f"end-to-end-synthetic (lbp-base rank1={rank1['lbp-base']:.2f}, "
           f"bior rank1={rank1['bior']:.2f}, {elapsed:.1f}s)")

    def test_protocol_round_trips(self, tmp_path):
        """500 random payload round trips bit-exact; validator catches
        transposition, missing ids and NaNs with zero false negatives."""
        rng = np.random.default_rng(99)
        for trial in range(250):
            n, dim = int(rng.integers(1, 5)), int(rng.integers(1, 24))
            vecs = [FeatureVector("d", f"v{i}",
                                  rng.standard_normal(dim).astype(np.float32))
                    for i in range(n)]
            p = tmp_path / "f.efv1"
            pr.write_features(p, vecs)
            blob = p.read_bytes()
            pr.write_features(p, pr.read_features(p))
            assert p.read_bytes() == blob, trial
        for trial in range(250):
            rows, cols = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            m = SimilarityMatrix(
                tuple(f"p{i}" for i in range(rows)),
                tuple(f"g{j}" for j in range(cols)),
                rng.standard_normal((rows, cols)).astype(np.float32))
            p = tmp_path / "m.esm1"
            pr.write_matrix(p, m, "binary")
            blob = p.read_bytes()
            pr.write_matrix(p, pr.read_matrix(p), "binary")
            assert p.read_bytes() == blob, trial
        # validator: zero false negatives on constructed violations
        good = SimilarityMatrix(("p0", "p1"), ("g0", "g1", "g2"),
                                np.zeros((2, 3), dtype=np.float32))
        assert pr.validate_matrix(good, ["p0", "p1"], ["g0", "g1", "g2"]).ok
        transposed = SimilarityMatrix(good.gallery_ids, good.probe_ids,
                                      good.scores.T)
        assert not pr.validate_matrix(transposed, ["p0", "p1"],
                                      ["g0", "g1", "g2"]).ok
        assert not pr.validate_matrix(good, ["p0", "p1"],
                                      ["g0", "g1", "g2", "g3"]).ok
        poisoned = SimilarityMatrix(good.probe_ids, good.gallery_ids,
                                    good.scores)
        nan_scores = poisoned.scores.copy()
        nan_scores[0, 0] = np.nan
        object.__setattr__(poisoned, "scores", nan_scores)   # bypass ctor check
        assert not pr.validate_matrix(poisoned, ["p0", "p1"],
                                      ["g0", "g1", "g2"]).ok
        ok("protocol-round-trips (500 trials bit-exact, validator 0 FN)")

    def test_noise_compliance(self):
        """Honest pipelines pass, label-cheating matrices are flagged at
        fraction 1.0; both deterministic under fixed seeds."""
        records = []
        for s in range(8):
            for i in range(4):
                records.append(pr.ImageRecord(
                    image_id=f"s{s}_i{i}", path="", subject_id=f"s{s}",
                    split="test"))
        manifest = pr.DatasetManifest(tuple(records))
        noisy, ledger = pr.inject_label_noise(manifest, 0.15, seed=21)
        noisy2, ledger2 = pr.inject_label_noise(manifest, 0.15, seed=21)
        assert ledger == ledger2 and noisy == noisy2

        def matrix_following(label_of):
            ids = tuple(r.image_id for r in records)
            scores = np.zeros((len(ids), len(ids)))
            for i, p in enumerate(ids):
                for j, g in enumerate(ids):
                    same = label_of(p) == label_of(g)
                    scores[i, j] = (0.9 if same else 0.1) + \
                        0.0001 * ((i * 31 + j * 17) % 23)
            return SimilarityMatrix(ids, ids, scores)

        # honest: similarity driven by the true identity (image content)
        true_subject = {r.image_id: r.subject_id for r in records}
        honest = matrix_following(lambda x: true_subject[x])
        report = pr.check_noise_compliance(honest, ledger, noisy)
        assert not report.flagged

        # cheat: similarity driven by the (noisy) labels
        noisy_subject = {r.image_id: r.subject_id for r in noisy.records}
        cheat = matrix_following(lambda x: noisy_subject[x])
        report = pr.check_noise_compliance(cheat, ledger, noisy)
        assert report.flagged
        assert report.suspicious_fraction == 1.0
        ok("noise-compliance (honest clean, cheat flagged at 1.0)")

    def test_cli_determinism(self, tmp_path):
        """Every CLI output byte-identical across two runs and across
        --threads {1, 4}."""

        def pipeline(root, threads):
            root.mkdir()
            outputs = {}
            data = root / "ds"
            buf = io.StringIO()
            with contextlib.redirect_stdout(buf):
                assert run_cli("synth", "--subjects", 6, "--images-per", 3,
                               "--seed", 3, "--out", data) == EXIT_OK
                manifest = data / "manifest.csv"
                feats = root / "f.efv1"
                flip = root / "flip.efv1"
                matrix = root / "m.esm1"
                fused = root / "fused.csv"
                assert run_cli("extract", "--manifest", manifest, "--preset",
                               "bior", "--out", feats,
                               "--threads", threads) == EXIT_OK
                assert run_cli("extract", "--manifest", manifest, "--preset",
                               "bior", "--out", flip, "--flip",
                               "--threads", threads) == EXIT_OK
                assert run_cli("score", "--probe-features", feats,
                               "--gallery-features", feats,
                               "--flip-features", flip, "--measure", "canberra",
                               "--out", matrix, "--threads", threads) == EXIT_OK
                assert run_cli("fuse", "--inputs", f"{matrix},{matrix}",
                               "--weights", "2,1", "--out", fused) == EXIT_OK
                assert run_cli("evaluate", "--matrix", matrix, "--manifest",
                               manifest, "--report", root / "r.json",
                               "--cmc-csv", root / "c.csv") == EXIT_OK
                assert run_cli("stratify", "--matrix", matrix, "--manifest",
                               manifest, "--key", "gender",
                               "--report", root / "s.json") == EXIT_OK
                assert run_cli("inject-noise", "--manifest", manifest,
                               "--fraction", "0.2", "--seed", "11",
                               "--out", root / "noisy.csv",
                               "--ledger", root / "ledger.json") == EXIT_OK
                assert run_cli("check-noise", "--matrix", matrix,
                               "--manifest", root / "noisy.csv",
                               "--ledger", root / "ledger.json") == EXIT_OK
                assert run_cli("validate", "--matrix", matrix,
                               "--manifest", manifest) == EXIT_OK
                probe = pr.load_manifest(manifest).records[0].image_id
                assert run_cli("qualitative", "--matrix", matrix,
                               "--manifest", manifest, "--probe", probe,
                               "-k", "2") == EXIT_OK
            # the target directory is an input; normalize it out of stdout
            outputs["__stdout__"] = buf.getvalue().replace(
                str(root), "<ROOT>").encode()
            for f in sorted(root.rglob("*")):
                if f.is_file():
                    outputs[str(f.relative_to(root))] = f.read_bytes()
            return outputs

        a = pipeline(tmp_path / "run_a", 1)
        b = pipeline(tmp_path / "run_b", 1)
        c = pipeline(tmp_path / "run_c", 4)
        assert sorted(a) == sorted(b) == sorted(c)
        for key in a:
            assert a[key] == b[key] == c[key], key
        ok(f"cli-determinism ({len(a) - 1} files byte-identical, threads 1 vs 4)")
