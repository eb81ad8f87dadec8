from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_imputation, make_samples
from core.errors import DataError
from models.configs import ArchSpec, TrainConfig
from models.gain import export_gain_matrix, load_gain_matrix
from models.series import SampleSet, SplitTag
from services.gain import axiom_checks, estimate_seg, estimate_seq_sim, estimate_trajectory
from services.report_templates import ReportTemplates
from services.training import train


def test_identical_labels_give_zero_gain(small_mlp, gain_problem):
    train_set, val, y1, _ = gain_problem
    same = make_imputation(y1.labels.copy(), name="copy")
    gains = estimate_seq_sim(small_mlp, train_set, y1, same, val)
    assert_array_equal(gains.values, np.zeros_like(gains.values))


def test_gain_is_linear_in_the_label_difference(small_mlp, gain_problem, rng):
    train_set, val, y1, _ = gain_problem
    step = rng.normal(size=y1.labels.shape)
    one = estimate_seq_sim(small_mlp, train_set, y1, make_imputation(y1.labels - step), val)
    two = estimate_seq_sim(small_mlp, train_set, y1, make_imputation(y1.labels - 2 * step), val)
    assert_allclose(two.values, 2 * one.values, rtol=1e-12)


def test_untouched_entries_are_exactly_zero(small_mlp, gain_problem):
    train_set, val, y1, y2 = gain_problem
    labels = y2.labels.copy()
    labels[:, :2] = y1.labels[:, :2]
    gains = estimate_seq_sim(small_mlp, train_set, y1, make_imputation(labels), val)
    assert np.all(gains.values[:, :2] == 0.0)
    assert np.all(gains.values[:, 2:] != 0.0)


def test_full_segmentation_equals_seq_sim(small_mlp, gain_problem):
    train_set, val, y1, y2 = gain_problem
    seg = estimate_seg(small_mlp, train_set, y1, y2, val, segments=train_set.output_len)
    full = estimate_seq_sim(small_mlp, train_set, y1, y2, val)
    assert_array_equal(seg.values, full.values)
    assert full.estimator == "seq-sim"
    assert seg.estimator == "seg-4"


def test_evaluation_order_does_not_change_bits(small_mlp, gain_problem, rng):
    train_set, val, y1, y2 = gain_problem
    shuffled = val.subset(rng.permutation(val.n))
    assert_array_equal(estimate_seq_sim(small_mlp, train_set, y1, y2, val).values,
                       estimate_seq_sim(small_mlp, train_set, y1, y2, shuffled).values)


def test_linear_model_closed_form(linear_model, rng):
    train_set = make_samples(rng, 7, input_len=5, output_len=3)
    val = make_samples(rng, 4, input_len=5, output_len=3, split=SplitTag.VALIDATION)
    y1 = make_imputation(train_set.targets)
    y2 = make_imputation(train_set.targets + rng.normal(size=train_set.targets.shape))

    W = linear_model.theta.reshape(3, 5)
    x_train, x_val = train_set.inputs.reshape(7, 5), val.inputs.reshape(4, 5)
    grads = 2.0 * (x_val @ W.T - val.targets) / 3
    sensitivity = (x_train @ x_val.T) @ grads
    expected = (2.0 / (7 * 3)) * sensitivity * (y1.labels - y2.labels)

    gains = estimate_seq_sim(linear_model, train_set, y1, y2, val)
    assert_allclose(gains.values, expected, rtol=1e-10, atol=1e-14)


def test_single_segment_averages_the_linear_sensitivity(linear_model, rng):
    train_set = make_samples(rng, 6, input_len=5, output_len=3)
    val = make_samples(rng, 5, input_len=5, output_len=3, split=SplitTag.VALIDATION)
    y1 = make_imputation(train_set.targets)
    y2 = make_imputation(train_set.targets - 0.5)
    full = estimate_seq_sim(linear_model, train_set, y1, y2, val)
    seg = estimate_seg(linear_model, train_set, y1, y2, val, segments=1)
    mean = full.sensitivity.mean(axis=1)
    for step in range(3):
        assert_allclose(seg.sensitivity[:, step], mean, rtol=1e-10, atol=1e-14)


def test_single_full_batch_epoch_trajectory(gain_problem):
    train_set, val, y1, y2 = gain_problem
    arch = ArchSpec.mlp(layers=2, hidden=8)
    cfg = TrainConfig(learning_rate=0.07, max_epochs=1, patience=1, batch_size=train_set.n, shuffle=False)
    _, trajectory = train(arch, train_set, y1, val, cfg)
    traj = estimate_trajectory(trajectory, train_set, y1, y2, val)
    kernel = estimate_seq_sim(trajectory.checkpoints[0], train_set, y1, y2, val)
    assert_allclose(traj.values, 0.07 * kernel.values, rtol=1e-10, atol=1e-15)
    assert traj.estimator == "trajectory"


def test_trajectory_rejects_missing_epochs(gain_problem):
    train_set, val, y1, y2 = gain_problem
    cfg = TrainConfig(learning_rate=0.05, max_epochs=2, patience=2, batch_size=5)
    _, trajectory = train(ArchSpec.mlp(layers=2, hidden=8), train_set, y1, val, cfg)
    with pytest.raises(DataError, match="epochs"):
        estimate_trajectory(trajectory, train_set, y1, y2, val, epochs=5)


def test_mismatched_evaluation_dims(small_mlp, gain_problem, rng):
    train_set, _, y1, y2 = gain_problem
    other = make_samples(rng, 3, input_len=5, split=SplitTag.VALIDATION)
    with pytest.raises(DataError, match="dimensions differ"):
        estimate_seq_sim(small_mlp, train_set, y1, y2, other)


def test_misaligned_imputations(small_mlp, gain_problem):
    train_set, val, y1, _ = gain_problem
    short = make_imputation(y1.labels[:4])
    with pytest.raises(DataError, match="misaligned"):
        estimate_seq_sim(small_mlp, train_set, y1, short, val)


def test_axioms_on_orthogonal_inputs(linear_model, rng):
    basis = np.eye(5)[:, None, :]
    train_set = SampleSet(inputs=basis, targets=rng.normal(size=(5, 3)))
    val = make_samples(rng, 2, input_len=5, output_len=3, split=SplitTag.VALIDATION)
    report = axiom_checks(linear_model, train_set, make_imputation(train_set.targets), val)
    assert report.zero_kernel_pairs == 10
    assert report.symmetric_zero_violations == 0
    assert report.symmetric_zero_holds
    assert report.continuity_passed
    assert report.diagonal_dominance.shape == (5,)


def test_per_sample_attributions_add_up_to_the_joint_change(small_mlp, gain_problem):
    train_set, val, y1, _ = gain_problem
    report = axiom_checks(small_mlp, train_set, y1, val, max_samples=6, seed=7)
    assert 0.0 <= report.efficiency_residual < 1e-8
    assert report.efficiency_holds
    assert "efficiency residual" in ReportTemplates.get_axioms(report)
    assert not replace(report, efficiency_residual=0.5).efficiency_holds


def test_gain_file_keeps_header_and_values(small_mlp, gain_problem, tmp_path):
    train_set, val, y1, y2 = gain_problem
    gains = estimate_seg(small_mlp, train_set, y1, y2, val, segments=2)
    loaded = load_gain_matrix(export_gain_matrix(gains, tmp_path / "seg-2.csv"))
    assert_array_equal(loaded.values, gains.values)
    assert loaded.pair == ("mean", "linear")
    assert loaded.segments == 2
    assert loaded.eval_split == "validation"


def test_sample_outside_every_batch_gets_no_trajectory_gain(gain_problem):
    train_set, val, y1, y2 = gain_problem
    cfg = TrainConfig(learning_rate=0.05, max_epochs=2, patience=2, batch_size=4)
    _, trajectory = train(ArchSpec.mlp(layers=2, hidden=8), train_set, y1, val, cfg)
    trajectory.batch_members = [[batch[batch != 0] for batch in epoch] for epoch in trajectory.batch_members]
    gains = estimate_trajectory(trajectory, train_set, y1, y2, val, epochs=2)
    assert_array_equal(gains.values[0], np.zeros(train_set.output_len))
    assert np.any(gains.values[1:] != 0.0)
