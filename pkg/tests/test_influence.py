import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_imputation, make_samples
from models.configs import InfluenceConfig
from models.gain import GainMatrix
from models.series import SplitTag
from services.influence import damped_hessian_operator, estimate_influence, rank_discard


def test_linear_model_matches_ridge_solution(linear_model, rng):
    n, damping = 8, 0.05
    train_set = make_samples(rng, n, input_len=5, output_len=3)
    val = make_samples(rng, 4, input_len=5, output_len=3, split=SplitTag.VALIDATION)
    y1 = make_imputation(train_set.targets)
    y2 = make_imputation(train_set.targets + rng.normal(size=train_set.targets.shape))
    cfg = InfluenceConfig(damping=damping, cg_max_iters=200, cg_tolerance=1e-11)

    gains, diagnostics = estimate_influence(linear_model, train_set, y1, y2, val, cfg)

    W = linear_model.theta.reshape(3, 5)
    x_train, x_val = train_set.inputs.reshape(n, 5), val.inputs.reshape(4, 5)
    C = (2.0 / (n * 3)) * x_train.T @ x_train
    G_sum = (2.0 * (x_val @ W.T - val.targets) / 3).T @ x_val
    V = np.linalg.solve(C + damping * np.eye(5), G_sum.T).T
    expected = (2.0 / (n * 3)) * (x_train @ V.T) * (y1.labels - y2.labels)

    assert diagnostics.converged
    assert gains.flags == []
    assert_allclose(gains.values, expected, rtol=1e-7, atol=1e-12)
    assert gains.metadata["damping"] == "0.05"


def test_hessian_operator_is_kronecker_for_linear_model(linear_model, rng):
    train_set = make_samples(rng, 6, input_len=5, output_len=3)
    operator = damped_hessian_operator(linear_model, train_set, train_set.targets, damping=0.0)
    x = train_set.inputs.reshape(6, 5)
    C = (2.0 / (6 * 3)) * x.T @ x
    dense = operator.matmat(np.eye(15))
    assert_allclose(dense, np.kron(np.eye(3), C), atol=1e-12)


def test_unconverged_solve_is_flagged(small_mlp, gain_problem):
    train_set, val, y1, y2 = gain_problem
    cfg = InfluenceConfig(damping=0.0, cg_max_iters=1, cg_tolerance=1e-14)
    gains, diagnostics = estimate_influence(small_mlp, train_set, y1, y2, val, cfg)
    assert not diagnostics.converged
    assert diagnostics.iterations <= 1
    assert gains.flags == ["cg-not-converged"]
    assert "cg-not-converged" in gains.header()["flags"]


def gain_with_aggregates(aggregates):
    values = np.column_stack([np.asarray(aggregates, dtype=float), np.zeros(len(aggregates))])
    return GainMatrix(values=values, masked=np.ones(values.shape, dtype=bool), eval_split="validation",
                      estimator="influence", pair=("mean", "linear"))


def test_rank_discard_takes_the_largest_gains():
    gain = gain_with_aggregates([1.0, 3.0, 3.0, -1.0, 0.0])
    assert_array_equal(rank_discard(gain, 40), [1, 2])
    # ties go to the lower index
    assert_array_equal(rank_discard(gain, 20), [1])
    assert_array_equal(rank_discard(gain, 50), [0, 1, 2])


@pytest.mark.parametrize("percent", [0, 100, -5])
def test_rank_discard_rejects_percent(percent):
    with pytest.raises(ValueError, match="percent"):
        rank_discard(gain_with_aggregates([1.0, 2.0]), percent)


def test_identical_labels_give_zero_influence(small_mlp, gain_problem):
    train_set, val, y1, _ = gain_problem
    gains, _ = estimate_influence(small_mlp, train_set, y1, y1, val, InfluenceConfig(damping=0.1))
    assert_array_equal(gains.values, np.zeros(gains.values.shape))


def test_heavier_damping_shrinks_the_estimate(small_mlp, gain_problem):
    train_set, val, y1, y2 = gain_problem
    light, _ = estimate_influence(small_mlp, train_set, y1, y2, val, InfluenceConfig(damping=0.01, cg_max_iters=500))
    heavy, _ = estimate_influence(small_mlp, train_set, y1, y2, val, InfluenceConfig(damping=1e4, cg_max_iters=500))
    assert np.linalg.norm(heavy.values) < np.linalg.norm(light.values)


def test_rank_discard_count_rounds_to_the_nearest_rank():
    assert len(rank_discard(gain_with_aggregates(np.linspace(-1.0, 1.0, 100)), 10)) == 10
