import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakcheck.calibration import (
    BenchmarkScores,
    above_threshold_fraction,
    build_histogram,
    far_threshold,
    load_benchmark_scores,
    read_histogram_csv,
    write_benchmark_scores,
    write_histogram_csv,
    write_histogram_sidecar,
)
from leakcheck.errors import FormatError, MissingInputError, ValidationError


def scores_with_impostor(impostor):
    return BenchmarkScores(genuine=[], impostor=list(impostor), source_id="test")


DESCENDING_TENTHS = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]


class TestFarThreshold:
    def test_worked_example_far_20_percent(self):
        far = far_threshold(scores_with_impostor(DESCENDING_TENTHS), 0.2)
        assert far.threshold == 0.8
        assert far.achieved_far == 0.2
        assert far.impostor_count == 10

    def test_worked_example_m_zero_forces_max(self):
        far = far_threshold(scores_with_impostor(DESCENDING_TENTHS), 0.05)
        assert far.threshold == 1.0
        assert far.achieved_far == 0.0

    def test_worked_example_ties_excluded_by_strict_comparison(self):
        far = far_threshold(scores_with_impostor([0.5, 0.5, 0.5, 0.1]), 0.5)
        assert far.threshold == 0.5
        assert far.achieved_far == 0.0

    def test_input_order_irrelevant(self):
        shuffled = list(DESCENDING_TENTHS)
        np.random.default_rng(0).shuffle(shuffled)
        assert far_threshold(scores_with_impostor(shuffled), 0.2) == far_threshold(
            scores_with_impostor(DESCENDING_TENTHS), 0.2
        )

    def test_empty_impostor_set(self):
        with pytest.raises(ValidationError) as err:
            far_threshold(scores_with_impostor([]), 0.1)
        assert err.value.code == "empty-impostor-set"

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.5, 1.5])
    def test_target_far_out_of_range(self, bad):
        with pytest.raises(ValidationError) as err:
            far_threshold(scores_with_impostor([0.1]), bad)
        assert err.value.code == "far-out-of-range"

    @settings(max_examples=200, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        n=st.integers(1, 400),
        target_far=st.sampled_from([1e-4, 1e-2, 0.2, 0.5, 0.99]),
        quantize=st.booleans(),
    )
    def test_guarantee_achieved_never_exceeds_target(self, seed, n, target_far, quantize):
        rng = np.random.default_rng(seed)
        raw = rng.normal(0, 0.1, n)
        if quantize:  # heavy ties
            raw = np.round(raw, 1)
        far = far_threshold(scores_with_impostor(raw.tolist()), target_far)
        recomputed = sum(1 for s in raw if s > far.threshold) / n
        assert recomputed == far.achieved_far
        assert far.achieved_far <= target_far

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 200))
    def test_threshold_monotone_in_target_far(self, seed, n):
        rng = np.random.default_rng(seed)
        scores = scores_with_impostor(rng.normal(0, 0.1, n).tolist())
        fars = [far_threshold(scores, t).threshold for t in (0.01, 0.1, 0.3, 0.7)]
        assert fars == sorted(fars, reverse=True)


class TestAboveThresholdFraction:
    def test_half_above(self):
        assert above_threshold_fraction(np.array([0.9, 0.2]), 0.5) == 0.5

    def test_strict_comparison_at_threshold(self):
        assert above_threshold_fraction(np.array([0.5, 0.5, 0.5]), 0.5) == 0.0

    def test_seeded_matches_direct_count(self):
        rng = np.random.default_rng(17)
        scores = rng.uniform(-1, 1, 1000)
        threshold = 0.25
        expected = sum(1 for s in scores if s > threshold) / 1000
        assert above_threshold_fraction(scores, threshold) == expected

    def test_empty_rejected(self):
        with pytest.raises(ValidationError) as err:
            above_threshold_fraction(np.array([]), 0.5)
        assert err.value.code == "empty-matches"


class TestHistogram:
    def test_half_open_bins(self):
        hist = build_histogram([0.1, 0.5, 0.9], 0.0, 1.0, 2)
        assert hist.counts == [1, 2]  # 0.5 belongs to the upper bin

    def test_hi_edge_lands_in_last_bin(self):
        hist = build_histogram([1.0], 0.0, 1.0, 4)
        assert hist.counts == [0, 0, 0, 1]
        assert hist.overflow == 0

    def test_out_of_range_counted(self):
        hist = build_histogram([-2.0, 0.5, 3.0], 0.0, 1.0, 1)
        assert hist.counts == [1]
        assert hist.underflow == 1 and hist.overflow == 1

    def test_seeded_uniform_10k(self):
        rng = np.random.default_rng(123)
        scores = rng.uniform(0.0, 1.0, 10_000)
        hist = build_histogram(scores, 0.0, 1.0, 64)
        assert sum(hist.counts) + hist.underflow + hist.overflow == 10_000
        expected = 10_000 / 64
        sigma = np.sqrt(10_000 * (1 / 64) * (1 - 1 / 64))
        assert all(abs(c - expected) <= 4 * sigma for c in hist.counts)

    def test_invalid_range(self):
        with pytest.raises(ValidationError):
            build_histogram([0.5], 1.0, 0.0, 4)
        with pytest.raises(ValidationError):
            build_histogram([0.5], 0.0, 1.0, 0)

    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        n=st.integers(0, 500),
        bins=st.integers(1, 50),
    )
    def test_conservation_and_permutation_invariance(self, seed, n, bins):
        rng = np.random.default_rng(seed)
        scores = rng.uniform(-2, 2, n)
        hist = build_histogram(scores, -1.0, 1.0, bins)
        assert sum(hist.counts) + hist.underflow + hist.overflow == n
        shuffled = scores.copy()
        rng.shuffle(shuffled)
        assert build_histogram(shuffled, -1.0, 1.0, bins) == hist


class TestScoresIo:
    def test_two_line_file(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("label,score\ngenuine,0.8\nimpostor,0.1\n")
        scores = load_benchmark_scores(path)
        assert scores.genuine == [0.8]
        assert scores.impostor == [0.1]
        assert scores.source_id == "scores"

    def test_headerless_file(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("impostor,0.25\n")
        assert load_benchmark_scores(path).impostor == [0.25]

    def test_unknown_label(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("positive,0.8\n")
        with pytest.raises(FormatError) as err:
            load_benchmark_scores(path)
        assert err.value.code == "unknown-label"

    def test_round_trip(self, tmp_path):
        original = BenchmarkScores(genuine=[0.9, 0.85], impostor=[0.1, 0.2, 0.3])
        path = tmp_path / "scores.csv"
        write_benchmark_scores(original, path)
        back = load_benchmark_scores(path)
        assert back.genuine == original.genuine
        assert back.impostor == original.impostor

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_benchmark_scores(tmp_path / "nope.csv")


class TestHistogramExport:
    def test_csv_round_trip(self, tmp_path):
        hist = build_histogram([0.1, 0.2, 0.9], 0.0, 1.0, 10)
        path = tmp_path / "hist.csv"
        write_histogram_csv(hist, path)
        back = read_histogram_csv(path)
        assert back.counts == hist.counts
        assert back.lo == hist.lo and back.hi == hist.hi

    def test_sidecar_contents(self, tmp_path):
        import json

        hist = build_histogram([0.1, 1.5], 0.0, 1.0, 4)
        far = far_threshold(scores_with_impostor(DESCENDING_TENTHS), 0.2)
        path = tmp_path / "hist.json"
        write_histogram_sidecar(hist, path, far=far, extra={"topk_cutoff_score": 0.42})
        doc = json.loads(path.read_text())
        assert doc["overflow"] == 1
        assert doc["total"] == 2
        assert doc["far_threshold"]["threshold"] == 0.8
        assert doc["topk_cutoff_score"] == 0.42
