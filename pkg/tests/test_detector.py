import numpy as np
import pytest

from avguard import detector
from avguard.detector import (
    auc,
    auc_pair_count,
    db,
    db_distortion,
    evaluate,
    f1_scores,
    l2_distortion,
    linf_distortion,
    roc_curve,
    select_threshold,
)


class TestDistortion:
    def test_identical_inputs(self):
        frames = np.zeros((3, 4, 4))
        assert l2_distortion(frames, frames) == 0.0
        assert linf_distortion(frames, frames) == 0.0

    def test_single_pixel_change(self):
        a = np.zeros((3, 4, 4))
        b = a.copy()
        b[1, 2, 2] = 7.0
        assert linf_distortion(a, b) == 7.0

    def test_uniform_shift_normalization(self):
        a = np.zeros((5, 6, 6))
        b = a + 4.0
        assert l2_distortion(a, b) == pytest.approx(4.0, abs=1e-12)
        assert linf_distortion(a, b) == 4.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l2_distortion(np.zeros((2, 3, 3)), np.zeros((3, 3, 3)))


class TestDb:
    def test_unit_peak(self):
        assert db([0.5, -1.0, 0.25]) == 0.0

    def test_peak_ten(self):
        assert db([10.0, -3.0]) == pytest.approx(20.0, abs=1e-12)

    def test_full_scale_int16(self):
        assert db([32767]) == pytest.approx(20 * np.log10(32767), abs=1e-12)
        assert db([32767]) == pytest.approx(90.308, abs=1e-3)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            db([0.0, 0.0])

    def test_relative_loudness(self):
        x = np.array([100.0, -2000.0])
        assert db_distortion(x, x) == 0.0
        assert db_distortion(x / 1000.0, x) == pytest.approx(-60.0, abs=1e-12)


class TestAuc:
    def test_perfect_separation(self):
        assert auc([5, 6, 7], [1, 2, 3]) == 1.0

    def test_identical_distributions(self):
        assert auc([1, 2], [1, 2]) == 0.5

    def test_pair_counting_example(self):
        assert auc([3, 1], [2]) == 0.5

    def test_matches_pair_counting_on_random_sets(self, rng):
        for _ in range(50):
            nb, na = rng.integers(1, 30, size=2)
            benign = np.round(rng.normal(size=nb), 1)  # rounding forces ties
            adv = np.round(rng.normal(size=na), 1)
            assert auc(benign, adv) == pytest.approx(auc_pair_count(benign, adv), abs=1e-12)

    def test_complement_identity_tie_free(self, rng):
        benign = rng.normal(size=17)
        adv = benign + rng.uniform(0.001, 1, size=17)  # no exact ties
        assert auc(benign, adv) + auc(adv, benign) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_transform_invariance(self, rng):
        benign = rng.normal(size=25)
        adv = rng.normal(size=19) - 0.7
        before = auc(benign, adv)
        assert auc(np.exp(benign), np.exp(adv)) == pytest.approx(before, abs=1e-12)
        assert auc(3 * benign + 2, 3 * adv + 2) == pytest.approx(before, abs=1e-12)

    def test_equals_trapezoid_roc_area(self, rng):
        for _ in range(20):
            benign = np.round(rng.normal(size=int(rng.integers(2, 40))), 1)
            adv = np.round(rng.normal(loc=-1, size=int(rng.integers(2, 40))), 1)
            curve = roc_curve(benign, adv)
            assert curve.area() == pytest.approx(auc(benign, adv), abs=1e-12)

    def test_roc_endpoints_and_monotonicity(self, rng):
        benign = rng.normal(size=12)
        adv = rng.normal(size=9)
        curve = roc_curve(benign, adv)
        assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
        assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            auc([], [1.0])


class TestSelectThreshold:
    def test_clean_gap_returns_midpoint(self):
        scores = [10.0, 9.0, 1.0, 2.0]
        labels = [False, False, True, True]
        tau = select_threshold(scores, labels)
        assert tau == 5.5
        f1_adv, f1_ben = f1_scores(scores, labels, tau)
        assert (f1_adv + f1_ben) / 2 == 1.0

    def test_all_scores_equal_picks_better_trivial_rule(self):
        scores = [3.0, 3.0, 3.0, 3.0, 3.0]
        labels = [True, True, True, True, False]
        tau = select_threshold(scores, labels)
        f1_adv, f1_ben = f1_scores(scores, labels, tau)
        # flag-everything beats flag-nothing here: F1_adv = 8/9
        assert (f1_adv + f1_ben) / 2 == pytest.approx(0.5 * (8.0 / 9.0), abs=1e-12)

    def test_overlapping_example(self):
        scores = [5.0, 4.0, 1.0, 3.0, 2.0]
        labels = [False, False, False, True, True]
        tau = select_threshold(scores, labels)
        assert tau == 3.5
        f1_adv, f1_ben = f1_scores(scores, labels, tau)
        assert f1_adv == pytest.approx(0.8) and f1_ben == pytest.approx(0.8)

    def test_beats_every_candidate_exhaustively(self, rng):
        for _ in range(25):
            n = int(rng.integers(4, 30))
            scores = np.round(rng.normal(size=n), 1)
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                continue
            tau = select_threshold(scores, labels)
            best = sum(f1_scores(scores, labels, tau)) / 2
            grid = np.concatenate((np.unique(scores) - 0.05, np.unique(scores) + 0.05))
            for cand in grid:
                assert best >= sum(f1_scores(scores, labels, float(cand))) / 2 - 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            select_threshold([1.0, 2.0], [True, True])


class TestEvaluate:
    def test_perfectly_separated(self):
        scores = [9.0, 8.0, 1.0, 2.0]
        labels = [False, False, True, True]
        report = evaluate(scores, labels, threshold=5.0)
        assert report.f1_avg == 1.0 and report.auc == 1.0
        assert report.counts == {"tp": 2, "fp": 0, "fn": 0, "tn": 2}

    def test_shuffled_labels_auc_near_half(self, rng):
        scores = rng.normal(size=200)
        labels = np.array([True] * 100 + [False] * 100)
        rng.shuffle(labels)
        report = evaluate(scores, labels, threshold=0.0)
        assert 0.4 <= report.auc <= 0.6

    def test_threshold_tie_counts_benign(self):
        report = evaluate([2.0, 2.0], [True, False], threshold=2.0)
        assert report.counts["tp"] == 0 and report.counts["tn"] == 1


class TestArtifacts:
    def test_roc_csv_round_trip(self, tmp_path, rng):
        curve = roc_curve(rng.normal(size=10), rng.normal(size=10) - 1)
        path = tmp_path / "roc.csv"
        detector.write_roc_csv(path, curve)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "fpr,tpr,threshold"
        assert len(rows) == len(curve.fpr) + 1

    def test_hist_csv_counts(self, tmp_path, rng):
        benign = rng.normal(size=60)
        adv = rng.normal(size=40) - 1
        path = tmp_path / "hist.csv"
        detector.write_hist_csv(path, benign, adv, bins=10)
        rows = path.read_text().strip().splitlines()[1:]
        assert len(rows) == 10
        b_total = sum(int(r.split(",")[2]) for r in rows)
        a_total = sum(int(r.split(",")[3]) for r in rows)
        assert b_total == 60 and a_total == 40
