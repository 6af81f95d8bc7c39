from __future__ import annotations

import bisect
import math

import numpy as np
import pytest
import scipy.stats

from canopy_bench.curation import (
    ExclusionReason,
    HeightSource,
    KsResult,
    SampleRecord,
    Split,
    apply_score_cmd,
    filter_by_quality,
    filter_empty_canopy,
    format_ks_line,
    ks_two_sample,
    load_manifest,
    save_manifest,
    split_distribution_report,
)
from canopy_bench.errors import EmptySampleError, EmptySplitError, MissingScoreError, RecordReadError
from canopy_bench.raster import Raster, write_raster

from conftest import random_raster


def record(rid="r", score=None, split=Split.TRAIN, chm_path="", reason=ExclusionReason.NONE):
    return SampleRecord(
        id=rid,
        image_path=f"{rid}.png",
        chm_path=chm_path,
        quality_score=score,
        split=split,
        exclusion_reason=reason,
    )


# ---------------------------------------------------------------------------
# Reference KS implementation: bisect-based CDF evaluation at every data
# point plus the same truncated-series p-value, written independently of the
# production sweep.


def ks_reference(a, b):
    a_sorted = sorted(float(x) for x in a)
    b_sorted = sorted(float(x) for x in b)
    n1, n2 = len(a_sorted), len(b_sorted)
    d = 0.0
    for x in a_sorted + b_sorted:
        ca = bisect.bisect_right(a_sorted, x)
        cb = bisect.bisect_right(b_sorted, x)
        gap = abs(ca / n1 - cb / n2)
        if gap > d:
            d = gap
    ne = n1 * n2 / (n1 + n2)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    if lam <= 0:
        return d, 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 == 1 else -term
        if term < 1e-10:
            break
        k += 1
    return d, min(1.0, max(0.0, 2.0 * total))


def _random_sample(rng, n):
    kind = rng.integers(0, 3)
    if kind == 0:
        return rng.normal(10, 3, n)
    if kind == 1:
        # heavy ties: integer-valued heights with many zeros
        return np.round(rng.exponential(4, n) * rng.integers(0, 2, n))
    return rng.uniform(0, 30, n)


class TestQualityFilter:
    def test_figure_scores_fixture(self):
        records = [record("noisy", 1.10), record("medium", 2.53), record("good", 3.71)]
        out = filter_by_quality(records, 2.5)
        assert [r.split for r in out] == [Split.EXCLUDED, Split.TRAIN, Split.TRAIN]
        assert out[0].exclusion_reason == ExclusionReason.LOW_QUALITY
        assert out[1].exclusion_reason == ExclusionReason.NONE

    def test_zero_threshold_excludes_nothing(self):
        records = [record(f"r{i}", s) for i, s in enumerate([0.0, 1.0, 4.9])]
        out = filter_by_quality(records, 0.0)
        assert all(r.split != Split.EXCLUDED for r in out)

    def test_exact_threshold_kept(self):
        out = filter_by_quality([record("edge", 2.5)], 2.5)
        assert out[0].split == Split.TRAIN

    def test_missing_score_raises(self):
        with pytest.raises(MissingScoreError):
            filter_by_quality([record("a", 3.0), record("b", None)], 2.5)

    def test_matches_brute_force_set(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            scores = rng.uniform(0, 5, n)
            threshold = float(rng.uniform(0, 5))
            records = [record(f"r{i}", float(s)) for i, s in enumerate(scores)]
            out = filter_by_quality(records, threshold)
            excluded = {r.id for r in out if r.split == Split.EXCLUDED}
            want = {f"r{i}" for i, s in enumerate(scores) if s < threshold}
            assert excluded == want
            assert [r.id for r in out] == [r.id for r in records]  # order kept
            assert len(out) == len(records)


class TestEmptyCanopyFilter:
    def test_all_zero_excluded(self, tmp_path):
        path = tmp_path / "zero.chmf"
        write_raster(Raster(values=np.zeros((8, 8), dtype=np.float32)), path)
        out = filter_empty_canopy([record("z", 3.0, chm_path=str(path))])
        assert out[0].split == Split.EXCLUDED
        assert out[0].exclusion_reason == ExclusionReason.EMPTY_CANOPY

    def test_single_positive_pixel_kept(self, tmp_path):
        values = np.zeros((8, 8), dtype=np.float32)
        values[3, 3] = 0.5
        path = tmp_path / "one.chmf"
        write_raster(Raster(values=values), path)
        out = filter_empty_canopy([record("one", 3.0, chm_path=str(path))])
        assert out[0].split == Split.TRAIN

    def test_matches_any_positive_oracle(self, tmp_path):
        rng = np.random.default_rng(23)
        for i in range(40):
            values = rng.uniform(-1, 1, size=(6, 6)).astype(np.float32)
            values[rng.random((6, 6)) < 0.3] = np.nan
            if i % 3 == 0:
                values = np.where(np.isnan(values), values, -np.abs(values))
            path = tmp_path / f"r{i}.chmf"
            write_raster(Raster(values=values), path)
            out = filter_empty_canopy([record(f"r{i}", 3.0, chm_path=str(path))])
            want_keep = any(
                v > 0 for v in values.ravel().tolist() if not math.isnan(v)
            )
            assert (out[0].split != Split.EXCLUDED) == want_keep

    def test_read_error_carries_record_id(self):
        with pytest.raises(RecordReadError) as err:
            filter_empty_canopy([record("ghost", 3.0, chm_path="/nonexistent/g.chmf")])
        assert err.value.record_id == "ghost"


class TestScoreCmd:
    def test_external_scorer_fills_missing(self, tmp_path):
        script = tmp_path / "score.py"
        script.write_text("import sys; print(len(sys.argv[1]) % 5)\n")
        records = [record("abc", None), record("prescored", 4.2)]
        out = apply_score_cmd(records, f"python3 {script}")
        assert out[0].quality_score == float(len("abc.png") % 5)
        assert out[1].quality_score == 4.2


class TestKsTwoSample:
    def test_identical_samples(self):
        a = [1.0, 2.0, 3.0, 4.0]
        res = ks_two_sample(a, list(a))
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_disjoint_supports(self):
        res = ks_two_sample([0.0] * 4, [1.0] * 4)
        assert res.statistic == 1.0
        assert res.p_value < 0.1

    def test_empty_sample(self):
        with pytest.raises(EmptySampleError):
            ks_two_sample([], [1.0])

    def test_against_reference_200_pairs(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n1 = int(rng.integers(1, 501))
            n2 = int(rng.integers(1, 501))
            a = _random_sample(rng, n1)
            b = _random_sample(rng, n2)
            res = ks_two_sample(a, b)
            d_ref, p_ref = ks_reference(a, b)
            assert res.statistic == d_ref
            assert abs(res.p_value - p_ref) <= 1e-6

    def test_statistic_matches_scipy_exactly(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            a = _random_sample(rng, int(rng.integers(2, 300)))
            b = _random_sample(rng, int(rng.integers(2, 300)))
            res = ks_two_sample(a, b)
            sp = scipy.stats.ks_2samp(a, b)
            assert res.statistic == pytest.approx(sp.statistic, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(44)
        for _ in range(50):
            a = _random_sample(rng, int(rng.integers(1, 100)))
            b = _random_sample(rng, int(rng.integers(1, 100)))
            r1 = ks_two_sample(a, b)
            r2 = ks_two_sample(b, a)
            assert r1.statistic == r2.statistic
            assert r1.p_value == r2.p_value
            assert (r1.n1, r1.n2) == (r2.n2, r2.n1)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(45)
        for _ in range(50):
            a = _random_sample(rng, int(rng.integers(1, 100)))
            b = _random_sample(rng, int(rng.integers(1, 100)))
            base = ks_two_sample(a, b)
            moved = ks_two_sample(3.0 * a + 7.0, 3.0 * b + 7.0)
            assert base.statistic == moved.statistic

    def test_p_decreasing_in_statistic(self):
        # survival function must fall as the statistic grows at fixed n
        n1, n2 = 80, 120
        ps = []
        for shift in np.linspace(0.0, 3.0, 13):
            rng = np.random.default_rng(99)
            a = rng.normal(0, 1, n1)
            b = rng.normal(shift, 1, n2)
            res = ks_two_sample(a, b)
            ps.append((res.statistic, res.p_value))
        ps.sort(key=lambda t: t[0])
        for (d1, p1), (d2, p2) in zip(ps, ps[1:]):
            assert p2 <= p1 + 1e-12

    def test_published_critical_values(self):
        # asymptotic two-sided critical points c(alpha) = sqrt(-ln(alpha/2)/2)
        from canopy_bench.curation import _kolmogorov_sf

        for lam, alpha in ((1.2239, 0.10), (1.3581, 0.05), (1.6276, 0.01)):
            assert abs(_kolmogorov_sf(lam) - alpha) < 1e-3

    def test_result_ranges(self):
        res = ks_two_sample([1, 2, 3], [2.5, 3.5])
        assert isinstance(res, KsResult)
        assert 0 <= res.statistic <= 1
        assert 0 <= res.p_value <= 1


class TestSplitReport:
    @staticmethod
    def _manifest_with_heights(tmp_path, heights_by_split):
        records = []
        for split, heights in heights_by_split.items():
            for i, h in enumerate(heights):
                values = np.full((4, 4), h, dtype=np.float32)
                path = tmp_path / f"{split.value}_{i}.chmf"
                write_raster(Raster(values=values), path)
                records.append(record(f"{split.value}_{i}", 3.0, split=split, chm_path=str(path)))
        return records

    def test_duplicated_split_gives_p_one(self, tmp_path):
        heights = [5.0, 10.0, 15.0]
        records = self._manifest_with_heights(
            tmp_path, {Split.TRAIN: heights, Split.VAL: heights, Split.TEST: heights}
        )
        report = split_distribution_report(records, HeightSource.PER_PIXEL_SUBSAMPLE, seed=1)
        for _, res in report:
            assert res.statistic == 0.0
            assert res.p_value == 1.0

    def test_disjoint_heights_statistic_one(self, tmp_path):
        records = self._manifest_with_heights(
            tmp_path,
            {Split.TRAIN: [5.0] * 3, Split.VAL: [5.0] * 2, Split.TEST: [30.0] * 2},
        )
        report = dict(split_distribution_report(records, HeightSource.PER_PIXEL_SUBSAMPLE, seed=1))
        assert report["train-test"].statistic == 1.0
        assert report["train-test"].p_value < 0.01

    def test_matches_direct_ks_on_materialized_heights(self, tmp_path):
        rng = np.random.default_rng(7)
        heights = {
            split: [float(h) for h in rng.uniform(1, 30, 4)]
            for split in (Split.TRAIN, Split.VAL, Split.TEST)
        }
        records = self._manifest_with_heights(tmp_path, heights)
        report = dict(split_distribution_report(records, HeightSource.PER_SAMPLE_MAX, seed=1))
        direct_val = ks_two_sample(heights[Split.TRAIN], heights[Split.VAL])
        direct_test = ks_two_sample(heights[Split.TRAIN], heights[Split.TEST])
        assert report["train-val"].statistic == direct_val.statistic
        assert report["train-test"].statistic == direct_test.statistic

    def test_per_pixel_subsample_without_truncation_matches_direct(self, tmp_path):
        rng = np.random.default_rng(8)
        per_split = {}
        records = []
        for split in (Split.TRAIN, Split.VAL, Split.TEST):
            values = rng.uniform(0, 20, size=(8, 8)).astype(np.float32)
            values[0, 0] = np.nan
            path = tmp_path / f"{split.value}.chmf"
            write_raster(Raster(values=values), path)
            records.append(record(split.value, 3.0, split=split, chm_path=str(path)))
            per_split[split] = values[~np.isnan(values)].astype(np.float64)
        report = dict(split_distribution_report(records, HeightSource.PER_PIXEL_SUBSAMPLE, seed=3))
        direct = ks_two_sample(per_split[Split.TRAIN], per_split[Split.VAL])
        assert report["train-val"].statistic == direct.statistic
        assert report["train-val"].p_value == direct.p_value

    def test_empty_split_raises(self, tmp_path):
        records = self._manifest_with_heights(tmp_path, {Split.TRAIN: [5.0], Split.VAL: [5.0]})
        with pytest.raises(EmptySplitError):
            split_distribution_report(records)

    def test_subsample_deterministic(self, tmp_path):
        rng = np.random.default_rng(9)
        records = []
        for split in (Split.TRAIN, Split.VAL, Split.TEST):
            values = rng.uniform(0, 20, size=(32, 32)).astype(np.float32)
            path = tmp_path / f"{split.value}.chmf"
            write_raster(Raster(values=values), path)
            records.append(record(split.value, 3.0, split=split, chm_path=str(path)))
        r1 = split_distribution_report(records, seed=5, subsample_size=100)
        r2 = split_distribution_report(records, seed=5, subsample_size=100)
        r3 = split_distribution_report(records, seed=6, subsample_size=100)
        assert [(p, res.statistic) for p, res in r1] == [(p, res.statistic) for p, res in r2]
        assert any(
            a[1].statistic != b[1].statistic for a, b in zip(r1, r3)
        )  # different seed draws different pixels


class TestManifestIo:
    def test_round_trip(self, tmp_path):
        records = [
            record("a", 3.0),
            record("b", None, split=Split.VAL),
            record("c", 1.0, split=Split.EXCLUDED, reason=ExclusionReason.LOW_QUALITY),
        ]
        path = tmp_path / "manifest.json"
        save_manifest(records, path)
        loaded = load_manifest(path)
        assert loaded == records

    def test_record_invariant_enforced(self):
        with pytest.raises(ValueError):
            SampleRecord(id="x", image_path="", chm_path="", split=Split.EXCLUDED)
        with pytest.raises(ValueError):
            SampleRecord(id="x", image_path="", chm_path="", quality_score=5.5)

    def test_ks_line_format(self):
        line = format_ks_line("train-val", KsResult(statistic=0.25, p_value=0.5, n1=10, n2=20))
        assert line == "pair=train-val D=0.25 p=0.5 n1=10 n2=20"
