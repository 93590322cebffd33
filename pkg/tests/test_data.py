"""Tests for CSV I/O, preprocessing and windowing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecnu_gnn import data
from ecnu_gnn.data import RawSeries
from ecnu_gnn.errors import ContractError, DataError, ParseError


def series(values, labels=None, ticks=None):
    values = np.asarray(values, dtype=float)
    return RawSeries([f"s{i}" for i in range(values.shape[0])], values, labels, ticks)


class TestCsv:
    def test_round_trip_bit_identical(self, tmp_path):
        s = series([[0.1, 1 / 3, -2e-300], [1e300, 7.0, math.pi]])
        path = tmp_path / "a.csv"
        data.save_csv(s, path)
        back = data.load_csv(path)
        assert back.values.tobytes() == s.values.tobytes()
        assert back.sensor_names == s.sensor_names
        data.save_csv(back, tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_bytes() == path.read_bytes()

    def test_label_column(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("a,b,label\n1,2,0\n3,4,1\n")
        s = data.load_csv(path)
        assert s.sensor_names == ["a", "b"]
        assert s.labels.tolist() == [0, 1]
        assert s.values.tolist() == [[1, 3], [2, 4]]

    def test_time_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time,a\n10,1\n11,2\n")
        s = data.load_csv(path)
        assert s.ticks.tolist() == [10, 11]
        assert s.sensor_names == ["a"]

    def test_empty_cell_is_missing(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a,b\n1,\n2,3\n")
        s = data.load_csv(path)
        assert s.missing.tolist() == [[False, False], [True, False]]

    @pytest.mark.parametrize(
        "text,line",
        [
            ("a,b\n1,2\n3\n", 3),
            ("a,b\n1,x\n", 2),
            ("1,2\n3,4\n", 1),
            ("", 1),
            ("a,label\n1,2\n", 2),
        ],
    )
    def test_parse_errors_name_line(self, tmp_path, text, line):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(ParseError, match=f"bad.csv:{line}:"):
            data.load_csv(path)


class TestDownsample:
    def test_factor_one_identity(self):
        s = series([[1.0, 2.0, 3.0]], labels=[0, 1, 0])
        out = data.downsample_median(s, 1)
        np.testing.assert_array_equal(out.values, s.values)
        np.testing.assert_array_equal(out.labels, s.labels)

    def test_median_suppresses_spike(self):
        out = data.downsample_median(series([[1.0, 100.0, 2.0]]), 3)
        assert out.values.tolist() == [[2.0]]

    def test_majority_label(self):
        out = data.downsample_median(series([np.zeros(6)], labels=[1, 1, 0, 0, 0, 1]), 3)
        assert out.labels.tolist() == [1, 0]

    def test_tie_goes_to_anomalous(self):
        out = data.downsample_median(series([np.zeros(4)], labels=[1, 0, 0, 1]), 2)
        assert out.labels.tolist() == [1, 1]

    def test_partial_block_and_ticks(self):
        out = data.downsample_median(series([[1.0, 3.0, 5.0, 7.0, 9.0]]), 2)
        assert out.values.tolist() == [[2.0, 6.0, 9.0]]
        assert out.ticks.tolist() == [0, 2, 4]

    def test_missing_ignored_in_median(self):
        out = data.downsample_median(series([[1.0, np.nan, 5.0]]), 3)
        assert out.values.tolist() == [[3.0]]

    @pytest.mark.parametrize("factor", [0, -1, 1.5])
    def test_bad_factor(self, factor):
        with pytest.raises(ContractError):
            data.downsample_median(series([[1.0]]), factor)


class TestImpute:
    def test_identity_without_missing(self):
        s = series([[1.0, 2.0]])
        np.testing.assert_array_equal(data.impute_mean(s).values, s.values)

    def test_hand_case(self):
        out = data.impute_mean(series([[1.0, np.nan, 3.0]]))
        assert out.values.tolist() == [[1.0, 2.0, 3.0]]

    def test_all_missing_sensor(self):
        with pytest.raises(DataError, match="s1"):
            data.impute_mean(series([[1.0, 2.0], [np.nan, np.nan]]))

    @given(st.lists(st.one_of(st.none(), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
    def test_no_missing_remain(self, cells):
        if all(c is None for c in cells):
            cells[0] = 0.0
        vals = [np.nan if c is None else c for c in cells]
        assert not np.isnan(data.impute_mean(series([vals])).values).any()


class TestTrim:
    def test_zero_identity(self):
        s = series([[1.0, 2.0]])
        np.testing.assert_array_equal(data.trim_head(s, 0).values, s.values)

    def test_arithmetic_and_alignment(self):
        s = series([np.arange(10.0)], labels=[0] * 5 + [1] * 5)
        out = data.trim_head(s, 3)
        assert out.n_steps == 7
        assert out.values[0, 0] == 3.0 and out.ticks[0] == 3
        assert out.labels.tolist() == s.labels[3:].tolist()

    def test_too_many(self):
        with pytest.raises(ContractError):
            data.trim_head(series([[1.0, 2.0]]), 2)


class TestMinMax:
    def test_arithmetic(self):
        stats = data.fit_minmax(series([[2.0, 10.0]]))
        assert data.apply_minmax(series([[6.0]]), stats).values[0, 0] == 0.5

    def test_constant_sensor(self):
        stats = data.fit_minmax(series([[4.0, 4.0]]))
        np.testing.assert_array_equal(data.apply_minmax(series([[4.0, 9.0]]), stats).values, 0.0)

    def test_no_clipping(self):
        stats = data.fit_minmax(series([[0.0, 1.0]]))
        assert data.apply_minmax(series([[3.0, -1.0]]), stats).values.tolist() == [[3.0, -1.0]]

    def test_stats_round_trip(self):
        stats = data.fit_minmax(series([[0.1, 0.7], [3.0, -2.0]]))
        back = data.NormStats.from_dict(stats.to_dict())
        assert back.minimum.tobytes() == stats.minimum.tobytes()


class TestWindows:
    def test_boundary(self):
        s = series([np.arange(6.0)])
        w = data.make_windows(s, 5)
        assert len(w) == 1
        assert w.inputs[0, 0].tolist() == [0, 1, 2, 3, 4] and w.targets[0, 0] == 5

    def test_count(self):
        assert len(data.make_windows(series([np.arange(10.0)]), 3)) == 7

    def test_too_short(self):
        with pytest.raises(ContractError):
            data.make_windows(series([np.arange(3.0)]), 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_slice_oracle(self, n, w, seed):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((n, w + int(rng.integers(1, 20))))
        labels = rng.integers(0, 2, values.shape[1])
        win = data.make_windows(series(values, labels), w)
        for i in range(len(win)):
            np.testing.assert_array_equal(win.inputs[i], values[:, i : i + w])
            np.testing.assert_array_equal(win.targets[i], values[:, i + w])
            assert win.labels[i] == labels[i + w]
            assert win.timestamps[i] == i + w


class TestSplit:
    def test_ninety_ten(self):
        w = data.make_windows(series([np.arange(101.0)]), 1)
        train, val = data.split_train_val(w, 0.1)
        assert (len(train), len(val)) == (90, 10)
        assert train.timestamps.max() < val.timestamps.min()

    def test_ceiling(self):
        w = data.make_windows(series([np.arange(4.0)]), 1)
        train, val = data.split_train_val(w, 0.5)
        assert (len(train), len(val)) == (1, 2)

    def test_partition(self):
        w = data.make_windows(series([np.arange(30.0)]), 2)
        train, val = data.split_train_val(w, 0.3)
        assert np.concatenate([train.timestamps, val.timestamps]).tolist() == w.timestamps.tolist()

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ContractError):
            data.split_train_val(data.make_windows(series([np.arange(5.0)]), 1), fraction)


class TestPipeline:
    def test_order_and_stats_from_train(self):
        raw = series([[100.0, 1.0, np.nan, 3.0, 5.0, 7.0]])
        cfg = data.PreprocessConfig(trim_head=1, downsample=2)
        out, stats = data.preprocess(raw, cfg)
        # trim -> [1, nan, 3, 5, 7]; blocks [1, nan] [3, 5] [7] -> 1, 4, 7
        assert stats.minimum.tolist() == [1.0] and stats.maximum.tolist() == [7.0]
        assert out.values.tolist() == [[0.0, 0.5, 1.0]]

    def test_idempotent_on_clean_data(self):
        raw = series(np.random.default_rng(0).uniform(0, 1, (3, 20)))
        cfg = data.PreprocessConfig()
        once, stats = data.preprocess(raw, cfg)
        twice, _ = data.preprocess(once, cfg, stats)
        np.testing.assert_allclose(twice.values, data.apply_minmax(once, stats).values)
        np.testing.assert_array_equal(data.impute_mean(data.downsample_median(once, 1)).values, once.values)

    def test_sidecar_round_trip(self, tmp_path):
        cfg = data.PreprocessConfig(trim_head=2, downsample=3)
        stats = data.fit_minmax(series([[0.0, 2.0]]))
        side = data.write_sidecar(tmp_path / "x.csv", cfg, stats)
        assert side.name == "x.csv.meta.json"
        back_cfg, back_stats = data.read_sidecar(side)
        assert back_cfg == cfg and back_stats.maximum.tolist() == [2.0]

    def test_bad_config(self):
        with pytest.raises(ContractError):
            data.PreprocessConfig(downsample=0)
        with pytest.raises(ContractError):
            data.PreprocessConfig(trim_head=-1)
