import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosette_gan.data import synth_dataset
from rosette_gan.errors import ValidationError
from rosette_gan.evaluation import (RegressorConfig, augmentation_experiment, baseline_regressor_predict,
                                    baseline_regressor_train, count_metrics, kfold_split, round_half_away)

from oracles import metric_oracle


class TestCountMetrics:
    def test_perfect(self):
        m = count_metrics([3, 4, 5], [3, 4, 5])
        assert (m.dic_mean, m.dic_std, m.abs_dic_mean, m.abs_dic_std, m.mse, m.r2) == (0, 0, 0, 0, 0, 1)

    def test_definitional_example(self):
        m = count_metrics([5, 7], [4, 7])
        assert m.dic_mean == 0.5 and m.abs_dic_mean == 0.5 and m.mse == 0.5

    def test_rounding_half_away(self):
        np.testing.assert_array_equal(round_half_away([0.5, 1.5, 2.5, -0.5, -1.5, 2.49]), [1, 2, 3, -1, -2, 2])

    def test_raw_vs_rounded_mse(self):
        m = count_metrics([4.4], [4])
        assert m.mse == pytest.approx(0.16) and m.mse_rounded == 0

    def test_constant_truth_flags_r2(self):
        m = count_metrics([1.0, 2.0], [3, 3])
        assert m.r2 is None and not m.r2_defined

    def test_mean_predictor_r2_zero(self, rng):
        truth = rng.integers(1, 10, 50)
        assert count_metrics(np.full(50, truth.mean()), truth).r2 == pytest.approx(0, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            count_metrics([1, 2], [1])
        with pytest.raises(ValidationError):
            count_metrics([], [])

    def test_oracle_1000_instances(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            truth = rng.integers(1, 12, n)
            pred = truth + rng.normal(0, 1.5, n)
            m = count_metrics(pred, truth)
            ref = metric_oracle(pred.tolist(), truth.tolist())
            got = (m.dic_mean, m.dic_std, m.abs_dic_mean, m.abs_dic_std, m.mse, m.r2)
            for a, b in zip(got, ref):
                if b is None:
                    assert a is None
                else:
                    assert abs(a - b) <= 1e-9


class TestKFold:
    def test_paper_split_sizes(self):
        for train, test in kfold_split(624, 4, np.random.default_rng(0)):
            assert len(train) == 468 and len(test) == 156

    def test_small_case_cover(self):
        folds = kfold_split(8, 4, np.random.default_rng(0))
        tests = [set(t.tolist()) for _, t in folds]
        assert all(len(t) == 2 for t in tests)
        assert set().union(*tests) == set(range(8))

    def test_deterministic(self):
        a = kfold_split(30, 3, np.random.default_rng(5))
        b = kfold_split(30, 3, np.random.default_rng(5))
        for (ta, sa), (tb, sb) in zip(a, b):
            np.testing.assert_array_equal(ta, tb)
            np.testing.assert_array_equal(sa, sb)

    @pytest.mark.parametrize("n,k", [(10, 1), (3, 4)])
    def test_invalid(self, n, k):
        with pytest.raises(ValidationError):
            kfold_split(n, k, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 60), st.integers(0, 1000))
def test_kfold_partition_property(k, extra, seed):
    n = k + extra
    folds = kfold_split(n, k, np.random.default_rng(seed))
    tests = [t for _, t in folds]
    assert sum(len(t) for t in tests) == n
    assert len(np.unique(np.concatenate(tests))) == n
    for train, test in folds:
        assert not set(train.tolist()) & set(test.tolist())
        assert len(train) + len(test) == n


@pytest.fixture(scope="module")
def rosettes32():
    return synth_dataset(500, range(3, 9), 32, np.random.default_rng(1))


class TestRegressor:
    def test_fits_rosettes(self, rosettes32):
        model = baseline_regressor_train(rosettes32, RegressorConfig(epochs=15, seed=0))
        pred = baseline_regressor_predict(model, rosettes32)
        assert count_metrics(pred, [s.leaf_count for s in rosettes32]).mse < 1.0

    def test_untrained_predicts_mean(self, rosettes32):
        subset = rosettes32[:100]
        model = baseline_regressor_train(subset, RegressorConfig(epochs=0))
        truth = np.array([s.leaf_count for s in subset])
        pred = baseline_regressor_predict(model, subset)
        assert abs(pred.mean() - truth.mean()) < 0.2
        assert np.mean(np.abs(pred - truth.mean())) < 0.5
        assert abs(count_metrics(pred, truth).r2) < 0.1

    def test_seed_sensitivity(self, rosettes32):
        subset = rosettes32[:64]
        cfg = RegressorConfig(epochs=2)
        a = baseline_regressor_train(subset, cfg, np.random.default_rng(0))
        b = baseline_regressor_train(subset, cfg, np.random.default_rng(1))
        a2 = baseline_regressor_train(subset, cfg, np.random.default_rng(0))
        assert not np.array_equal(a.params["head.w"].data, b.params["head.w"].data)
        np.testing.assert_array_equal(a.params["head.w"].data, a2.params["head.w"].data)

    def test_too_few_samples(self, rosettes32):
        with pytest.raises(ValidationError):
            baseline_regressor_train(rosettes32[:5])


class TestExperiment:
    @pytest.fixture(scope="class")
    @classmethod
    def report(cls):
        real = synth_dataset(48, range(3, 7), 16 * 2, np.random.default_rng(3))
        synth = synth_dataset(12, range(3, 7), 32, np.random.default_rng(4))
        return augmentation_experiment(real, synth, 4, RegressorConfig(epochs=2, base_width=4))

    def test_two_blocks(self, report):
        text = report.to_text()
        assert "Trained on A4 only" in text and "Trained on A4 and Ax" in text
        for row in ("DiC", "|DiC|", "MSE", "R2"):
            assert row in text

    def test_identical_test_indices(self, report):
        a, b = report.fold_results("real"), report.fold_results("real+synthetic")
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.test_indices, fb.test_indices)
            assert fb.n_train == fa.n_train + 12

    def test_folds_cover_pool(self, report):
        idx = np.concatenate([f.test_indices for f in report.fold_results("real")])
        assert sorted(idx.tolist()) == list(range(48))

    def test_csv(self, report, tmp_path):
        path = report.write_csv(tmp_path / "r.csv")
        rows = list(csv.DictReader(open(path)))
        assert set(rows[0]) == {"condition", "fold", "split", "metric", "value"}
        assert {r["condition"] for r in rows} == {"real", "real+synthetic"}
        assert {r["fold"] for r in rows} == {"0", "1", "2", "3", "mean"}

    def test_empty_synthetic_warns(self, caplog):
        real = synth_dataset(40, range(3, 7), 16 * 2, np.random.default_rng(3))
        rep = augmentation_experiment(real, [], 4, RegressorConfig(epochs=1, base_width=4))
        assert rep.conditions == ["real"]
        assert "no synthetic" in caplog.text
        assert "Trained on A4 and Ax" not in rep.to_text()
