import numpy as np
import pytest

from csirecomp import eval_metrics
from csirecomp.eval_metrics import element_series, mean_baseline_rmse, rmse, summarize


class TestRmse:
    def test_equal_tensors(self):
        x = np.random.default_rng(0).random((4, 8, 3, 1))
        assert rmse(x, x) == 0.0

    def test_constant_offset(self):
        x = np.random.default_rng(1).random((4, 8, 3, 1))
        assert rmse(x + 0.1, x) == pytest.approx(0.1, abs=1e-12)

    def test_matches_two_loop_accumulation(self):
        rng = np.random.default_rng(2)
        pred = rng.random((5, 6, 4, 1))
        truth = rng.random((5, 6, 4, 1))
        total = 0.0
        count = 0
        for i in range(5):
            for flat_p, flat_t in zip(pred[i].ravel(), truth[i].ravel()):
                total += (flat_p - flat_t) ** 2
                count += 1
        assert rmse(pred, truth) == pytest.approx(np.sqrt(total / count), abs=1e-12)

    def test_metric_properties(self):
        rng = np.random.default_rng(3)
        a = rng.random((3, 4))
        b = rng.random((3, 4))
        assert rmse(a, b) >= 0
        assert rmse(a, b) == rmse(b, a)
        assert rmse(a, a) == 0.0
        assert rmse(a, b) > 0

    def test_batched_equals_pooled_sum_of_squares(self):
        rng = np.random.default_rng(4)
        pred = rng.random((7, 5, 3, 1))
        truth = rng.random((7, 5, 3, 1))
        pooled_sq = sum(
            np.sum((pred[i] - truth[i]) ** 2) for i in range(7)
        ) / pred.size
        assert rmse(pred, truth) == pytest.approx(np.sqrt(pooled_sq), abs=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            rmse(np.zeros((2, 3)), np.zeros((3, 2)))


class TestSummarize:
    def test_constant_seeds(self):
        metrics = summarize([0.1, 0.1, 0.1], kind="mmi")
        assert metrics.mean_rmse == pytest.approx(0.1)
        assert metrics.std_rmse == pytest.approx(0.0, abs=1e-15)

    def test_two_point_population_std(self):
        metrics = summarize([0.1, 0.2])
        assert metrics.mean_rmse == pytest.approx(0.15)
        assert metrics.std_rmse == pytest.approx(0.05)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        values = rng.random(5).tolist()
        a = summarize(values)
        b = summarize(list(reversed(values)))
        assert a.mean_rmse == pytest.approx(b.mean_rmse, abs=1e-15)
        assert a.std_rmse == pytest.approx(b.std_rmse, abs=1e-15)

    def test_single_seed_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            summarize([0.1])

    def test_mean_within_range(self):
        metrics = summarize([0.3, 0.1, 0.2])
        assert min(metrics.per_seed_rmse) <= metrics.mean_rmse <= max(metrics.per_seed_rmse)


class TestMeanBaseline:
    def test_constant_data_gives_zero(self):
        train = np.full((10, 4, 3, 1), 0.5)
        test = np.full((5, 4, 3, 1), 0.5)
        assert mean_baseline_rmse(train, test) == 0.0

    def test_matches_manual_computation(self):
        rng = np.random.default_rng(6)
        train = rng.random((20, 4, 3, 1))
        test = rng.random((8, 4, 3, 1))
        mean = train.mean(axis=0)
        expected = np.sqrt(np.mean((test - mean) ** 2))
        assert mean_baseline_rmse(train, test) == pytest.approx(expected, abs=1e-14)


class TestElementSeries:
    def test_row_count_and_passthrough(self):
        rng = np.random.default_rng(7)
        truth = rng.random((64, 12, 1))
        pred = rng.random((64, 12, 1))
        rows = element_series(truth, pred, (0, 0), n_tx=3)
        assert rows.shape == (64, 3)
        assert np.array_equal(rows[:, 0], np.arange(64))
        assert np.array_equal(rows[:, 1], truth[:, 0, 0])
        assert np.array_equal(rows[:, 2], pred[:, 0, 0])

    def test_flat_index_row_major(self):
        rng = np.random.default_rng(8)
        truth = rng.random((16, 12, 1))
        pred = rng.random((16, 12, 1))
        rows = element_series(truth, pred, (2, 1), n_tx=3)  # flat = 2*3+1 = 7
        assert np.array_equal(rows[:, 1], truth[:, 7, 0])

    def test_out_of_range_element(self):
        truth = np.zeros((8, 12, 1))
        with pytest.raises(ValueError):
            element_series(truth, truth, (4, 0), n_tx=3)
        with pytest.raises(ValueError):
            element_series(truth, truth, (0, 3), n_tx=3)

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        truth = rng.random((8, 12, 1))
        pred = rng.random((8, 12, 1))
        rows = element_series(truth, pred, (1, 2), n_tx=3)
        path = tmp_path / "series.csv"
        eval_metrics.write_element_series_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "k,truth,pred"
        parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert np.array_equal(parsed, rows)
