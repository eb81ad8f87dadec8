import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_imputation, make_samples
from models.results import OracleResult
from services.metrics import (agreement, curve_frame, imputation_mse, mse_table, timing_frame,
                              timing_report)


def oracle_result(indices, gains, timesteps=None):
    gains = np.asarray(gains, dtype=float)
    return OracleResult(indices=np.asarray(indices), true_gains=gains, base_loss=1.0, base_loss_sum=10.0,
                        per_run_losses=1.0 - gains / 10, run_loss_sums=10.0 - gains,
                        timesteps=None if timesteps is None else np.asarray(timesteps), n_train=20)


class TestAgreement:
    def test_identical_estimates(self, rng):
        truth = rng.normal(size=30)
        curve = agreement(truth, truth)
        assert_allclose(curve.corr, 1.0)
        assert_array_equal(curve.sign_acc, 1.0)
        assert_array_equal(curve.counts, [3, 6, 9, 12, 15, 18, 21, 24, 27, 30])

    def test_negated_estimates(self, rng):
        truth = rng.normal(size=30)
        curve = agreement(-truth, truth)
        assert_allclose(curve.corr, -1.0)
        assert_array_equal(curve.sign_acc, 0.0)

    def test_invariant_to_positive_scaling(self, rng):
        truth, est = rng.normal(size=25), rng.normal(size=25)
        plain, scaled = agreement(est, truth), agreement(3.5 * est, truth)
        assert_allclose(plain.corr, scaled.corr, rtol=1e-12)
        assert_array_equal(plain.sign_acc, scaled.sign_acc)

    def test_invariant_to_joint_permutation(self, rng):
        truth, est = rng.normal(size=40), rng.normal(size=40)
        perm = rng.permutation(40)
        plain, permuted = agreement(est, truth), agreement(est[perm], truth[perm])
        assert_allclose(plain.corr, permuted.corr, rtol=1e-12)
        assert_array_equal(plain.sign_acc, permuted.sign_acc)

    def test_fewer_than_two_selected_is_nan(self):
        curve = agreement(np.array([3.0, -1.0, 2.0, 0.5, 1.0]), np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
                          percents=[20, 40])
        assert np.isnan(curve.corr[0]) and np.isnan(curve.sign_acc[0])
        assert curve.counts.tolist() == [1, 2]
        # top 40% by |estimate| are samples 0 and 2
        assert curve.sign_acc[1] == 1.0
        assert curve.corr[1] == pytest.approx(-1.0)

    def test_constant_selection_has_nan_correlation(self):
        curve = agreement(np.ones(4), np.array([1.0, 2.0, 3.0, 4.0]), percents=[100])
        assert np.isnan(curve.corr[0])
        assert curve.sign_acc[0] == 1.0

    def test_zero_estimate_matches_only_zero_gain(self):
        curve = agreement(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]), percents=[100])
        assert curve.sign_acc[0] == pytest.approx(2 / 3)

    def test_percent_range(self):
        with pytest.raises(ValueError, match="percents"):
            agreement(np.ones(3), np.ones(3), percents=[0, 50])

    def test_oracle_sample_level_alignment(self, rng):
        estimates = rng.normal(size=(20, 4))
        truth = oracle_result([2, 7, 11], [0.3, -0.1, 0.2])
        full = agreement(estimates, truth, percents=[100])
        direct = agreement(estimates[[2, 7, 11]].sum(axis=1), np.array([0.3, -0.1, 0.2]), percents=[100])
        assert_allclose(full.corr, direct.corr)

    def test_oracle_timestep_level_alignment(self, rng):
        estimates = rng.normal(size=(20, 4))
        truth = oracle_result([2, 2, 5], [0.3, -0.1, 0.2], timesteps=[0, 3, 1])
        curve = agreement(estimates, truth, percents=[100])
        direct = agreement(estimates[[2, 2, 5], [0, 3, 1]], truth.true_gains, percents=[100])
        assert_allclose(curve.corr, direct.corr)

    def test_curve_frame_columns(self, rng):
        truth = rng.normal(size=10)
        frame = curve_frame([agreement(truth, truth, label="seq-sim"), agreement(-truth, truth, label="x")])
        assert list(frame.columns) == ["label", "percent", "corr", "sign_acc", "count"]
        assert len(frame) == 20


class TestImputationMse:
    def test_constant_offset(self, rng):
        samples = make_samples(rng, 6)
        masked = rng.random(samples.targets.shape) < 0.5
        masked[0, 0] = True
        imputation = make_imputation(np.where(masked, samples.targets + 0.25, samples.targets), masked)
        assert imputation_mse(imputation, samples) == pytest.approx(0.0625)

    def test_exact_imputation_scores_zero(self, rng):
        samples = make_samples(rng, 3)
        assert imputation_mse(make_imputation(samples.targets), samples) == 0.0

    def test_nothing_masked(self, rng):
        samples = make_samples(rng, 3)
        empty = np.zeros(samples.targets.shape, dtype=bool)
        with pytest.raises(ValueError, match="masked entry"):
            imputation_mse(make_imputation(samples.targets, empty), samples)


class TestTables:
    def test_timing_ratios(self):
        table = timing_report({"seq-sim": 2.0, "seg-1": 0.5, "influence": 8.0},
                              per_retrain_seconds=1.5, n_train=100)
        assert table.ratios == [1.0, 0.25, 4.0]
        assert table.projected_retraining_seconds == 150.0
        frame = timing_frame(table)
        assert frame["method"].tolist()[-1] == "retraining (projected)"
        assert frame["ratio"].tolist()[-1] == 75.0

    def test_timing_reference_fallback(self):
        table = timing_report({"seg-2": 4.0, "trajectory": 2.0})
        assert table.reference == "seg-2"
        assert table.ratios == [1.0, 0.5]
        assert len(timing_frame(table)) == 2
        with pytest.raises(ValueError):
            timing_report({})

    def test_mse_table_index(self):
        frame = mse_table({"mean": {"imputation_mse": 0.2}, "linear": {"imputation_mse": 0.1}})
        assert frame.index.name == "label"
        assert frame.loc["linear", "imputation_mse"] == 0.1
