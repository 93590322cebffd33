"""Tests for deviation scoring, smoothing, thresholding and metrics."""

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecnu_gnn import score as S
from ecnu_gnn.errors import ContractError, DimensionError


def linear_quantile(values, q):
    """Textbook linear-interpolation quantile on a sorted copy."""
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def straight_line_scores(pred, truth, val_err, m):
    """Loop-by-loop scoring written without the module's helpers."""
    t_len, n = len(pred), len(pred[0])
    med, iqr = [], []
    for i in range(n):
        col = [val_err[t][i] for t in range(len(val_err))]
        med.append(linear_quantile(col, 0.5))
        iqr.append(linear_quantile(col, 0.75) - linear_quantile(col, 0.25))
    floor = max(1e-2 * linear_quantile(iqr, 0.5), 1e-8)
    iqr = [max(v, floor) for v in iqr]
    a_max = []
    for t in range(t_len):
        a = [(abs(truth[t][i] - pred[t][i]) - med[i]) / iqr[i] for i in range(n)]
        a_max.append(max(a))
    smooth = []
    for t in range(t_len):
        window = a_max[max(0, t - m + 1) : t + 1]
        smooth.append(sum(window) / len(window))
    return np.array(a_max), np.array(smooth)


def exhaustive_best_f1(scores, labels):
    best = 0.0
    for thr in np.unique(scores):
        pred = (scores > thr).astype(int)
        tp = int(((pred == 1) & (labels == 1)).sum())
        fp = int(((pred == 1) & (labels == 0)).sum())
        fn = int(((pred == 0) & (labels == 1)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        best = max(best, 2 * p * r / (p + r) if p + r else 0.0)
    return best


class TestAbsError:
    def test_cases(self):
        assert S.abs_error([1.0, 2.0], [1.0, 2.0]).tolist() == [0.0, 0.0]
        assert S.abs_error([1.0, -1.0], [0.0, 0.0]).tolist() == [1.0, 1.0]
        a, b = np.random.default_rng(0).standard_normal((2, 7))
        np.testing.assert_array_equal(S.abs_error(a, b), S.abs_error(b, a))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            S.abs_error([1.0], [1.0, 2.0])


class TestRobustStats:
    def test_constant_floored(self):
        stats = S.fit_robust_stats(np.full((10, 2), 3.0))
        assert stats.median.tolist() == [3.0, 3.0]
        assert stats.iqr.tolist() == [1e-8, 1e-8]

    def test_quantile_oracle(self):
        stats = S.fit_robust_stats(np.array([[1.0], [2.0], [3.0], [4.0]]))
        assert stats.median[0] == 2.5
        assert stats.iqr[0] == pytest.approx(3.25 - 1.75)

    def test_outlier_robust(self):
        assert S.fit_robust_stats(np.array([1.0, 1.0, 1.0, 1000.0])).median[0] == 1.0

    def test_floor_relative_to_median_iqr(self):
        err = np.column_stack([np.arange(8.0), np.arange(8.0) * 2, np.zeros(8)])
        stats = S.fit_robust_stats(err)
        assert stats.iqr[2] == pytest.approx(1e-2 * 3.5)

    def test_too_few(self):
        with pytest.raises(ContractError):
            S.fit_robust_stats(np.ones((3, 2)))

    def test_dict_round_trip(self):
        stats = S.fit_robust_stats(np.random.default_rng(0).random((10, 3)))
        back = S.RobustStats.from_dict(json.loads(json.dumps(stats.to_dict())))
        assert back.iqr.tobytes() == stats.iqr.tobytes()


class TestNormalize:
    def test_cases(self):
        stats = S.RobustStats(np.array([1.0, 4.0]), np.array([2.0, 1.0]))
        assert S.normalize([1.0, 4.0], stats).tolist() == [0.0, 0.0]
        assert S.normalize([5.0, 4.0], stats)[0] == 2.0

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_monotone(self, e1, e2):
        stats = S.RobustStats(np.array([1.0]), np.array([0.5]))
        lo, hi = sorted((e1, e2))
        assert S.normalize([lo], stats)[0] <= S.normalize([hi], stats)[0]


class TestAggregateMax:
    def test_cases(self):
        assert S.aggregate_max([0.1, 3.0, 0.2]) == (3.0, 1)
        assert S.aggregate_max([2.0, 2.0, 2.0]) == (2.0, 0)

    def test_empty(self):
        with pytest.raises(ContractError):
            S.aggregate_max([])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
    def test_max_law(self, values):
        value, idx = S.aggregate_max(values)
        assert all(value >= v for v in values) and values[idx] == value


class TestSma:
    def test_cases(self):
        x = np.random.default_rng(0).standard_normal(9)
        np.testing.assert_array_equal(S.sma(x, 1), x)
        np.testing.assert_allclose(S.sma(np.full(6, 2.5), 4), 2.5)
        assert S.sma([0.0, 0.0, 3.0], 3).tolist() == [0.0, 0.0, 1.0]

    def test_warm_up_prefix(self):
        np.testing.assert_allclose(S.sma([2.0, 4.0, 6.0, 8.0], 3), [2.0, 3.0, 4.0, 6.0])

    def test_window_longer_than_series(self):
        np.testing.assert_allclose(S.sma([1.0, 3.0], 5), [1.0, 2.0])

    @pytest.mark.parametrize("m", [0, -2])
    def test_bad_window(self, m):
        with pytest.raises(ContractError):
            S.sma([1.0], m)


class TestPipelineOracle:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 20), st.integers(4, 200), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_matches_straight_line(self, n, t_len, m, seed):
        rng = np.random.default_rng(seed)
        pred, truth = rng.standard_normal((2, t_len, n))
        val_err = np.abs(rng.standard_normal((max(4, t_len // 2), n)))
        stats = S.fit_robust_stats(val_err)
        series = S.score_series(pred, truth, stats, m)
        a_max, smooth = straight_line_scores(pred.tolist(), truth.tolist(), val_err.tolist(), m)
        np.testing.assert_allclose(series.score, a_max, rtol=0, atol=1e-9)
        np.testing.assert_allclose(series.smoothed, smooth, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(series.score, series.normalized.max(axis=1))

    def test_sensor_mismatch(self):
        stats = S.fit_robust_stats(np.ones((4, 3)))
        with pytest.raises(DimensionError):
            S.score_series(np.zeros((5, 2)), np.zeros((5, 2)), stats)


class TestMetrics:
    def test_perfect(self):
        assert S.metrics([0, 1, 1], [0, 1, 1]) == (1.0, 1.0, 1.0)

    def test_all_zero_prediction(self):
        assert S.metrics([0, 0, 0], [0, 1, 1]) == (0.0, 0.0, 0.0)

    def test_arithmetic(self):
        pred = [1, 1, 1, 1, 0, 0]
        true = [1, 1, 1, 0, 1, 0]
        assert S.confusion(pred, true) == (3, 1, 1)
        assert S.metrics(pred, true) == (0.75, 0.75, 0.75)

    def test_non_binary(self):
        with pytest.raises(ContractError):
            S.metrics([0, 2], [0, 1])

    def test_no_point_adjustment(self):
        labels = np.array([0, 0, 1, 1, 1, 1, 0, 0])
        scores = np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0])
        report = S.evaluate_threshold(scores, labels, 1.0)
        assert report.predicted.tolist() == [0, 0, 0, 1, 0, 0, 0, 0]
        assert (report.tp, report.fp, report.fn) == (1, 0, 3)
        assert report.recall == 0.25

    def test_strict_threshold(self):
        assert S.evaluate_threshold([1.0, 2.0], [0, 1], 1.0).predicted.tolist() == [0, 1]


class TestGridSearch:
    def test_separable(self):
        scores = np.array([0.1, 0.2, 0.3, 0.8, 0.9])
        report = S.grid_search_threshold(scores, [0, 0, 0, 1, 1], 10)
        assert report.f1 == 1.0
        assert 0.3 <= report.threshold < 0.8

    @pytest.mark.parametrize("seed", range(5))
    def test_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, 200)
        scores = rng.standard_normal(200) + labels
        report = S.grid_search_threshold(scores, labels, 50)
        assert report.f1 == pytest.approx(exhaustive_best_f1(scores, labels), abs=1e-12)

    def test_argmax_law_and_lowest_tie(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, 60)
        scores = np.round(rng.random(60), 1)
        report = S.grid_search_threshold(scores, labels, 5)
        f1s = {c: S.evaluate_threshold(scores, labels, c).f1 for c in S.threshold_candidates(scores, 5)}
        assert report.f1 >= max(f1s.values()) - 1e-15
        assert report.threshold == min(c for c, f in f1s.items() if f == max(f1s.values()))

    def test_degenerate_labels_warn(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            report = S.grid_search_threshold([0.1, 0.5, 0.9], [0, 0, 0], 4)
        assert report.warning is not None and report.f1 == 0.0

    def test_bad_grid(self):
        with pytest.raises(ContractError):
            S.grid_search_threshold([0.1, 0.2], [0, 1], 1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_recall_monotone_in_threshold(self, seed):
        rng = np.random.default_rng(seed)
        scores, labels = rng.standard_normal(50), rng.integers(0, 2, 50)
        thresholds = np.sort(rng.standard_normal(10))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            recalls = [S.evaluate_threshold(scores, labels, t).recall for t in thresholds]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))


class TestExport:
    def test_scores_csv(self, tmp_path):
        stats = S.fit_robust_stats(np.abs(np.random.default_rng(0).standard_normal((6, 2))))
        series = S.score_series(np.zeros((3, 2)), np.ones((3, 2)), stats, 2)
        path = tmp_path / "s.csv"
        S.write_scores_csv(path, [5, 6, 7], series, ["a", "b"], per_sensor=True)
        lines = path.read_text().splitlines()
        assert lines[0] == "time,A,A_smooth,argmax_sensor,a_a,a_b"
        assert len(lines) == 4
        assert float(lines[1].split(",")[1]) == series.score[0]

    def test_report_json(self, tmp_path):
        report = S.evaluate_threshold([0.0, 1.0], [0, 1], 0.5)
        S.write_report(tmp_path / "r.json", report)
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["f1"] == 1.0 and d["n_predicted"] == 1
