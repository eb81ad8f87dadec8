import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.forecaster import (ForecasterFactory, init_params, jvp, loss, loss_cross_derivative, loss_hvp,
                             moving_average_matrix, ntk, output_jacobian, output_jacobians, param_grad,
                             per_sample_loss, predict)
from core.projector import make_projector
from models.configs import ArchSpec
from models.params import ModelDims

ARCHS = [
    (ArchSpec.mlp(layers=3, hidden=7), ModelDims(2, 5, 3)),
    (ArchSpec.mlp(layers=2, hidden=6, bias=False), ModelDims(1, 4, 3)),
    (ArchSpec.dlinear(kernel=3), ModelDims(1, 6, 3)),
    (ArchSpec.dlinear(kernel=5), ModelDims(3, 7, 2)),
]


def random_params(arch, dims, rng):
    params = init_params(arch, dims, seed=0)
    return params.with_theta(rng.normal(scale=0.5, size=params.n_params))


def mean_loss(params, X, Y):
    return float(np.mean(per_sample_loss(params, X, Y)))


def test_default_mlp_parameter_count():
    dims = ModelDims(1, 24, 24)
    assert ArchSpec().param_count(dims) == 22808
    assert ForecasterFactory.create(ArchSpec(), dims).n_params == 22808


def test_dlinear_parameter_count_with_projection():
    assert ArchSpec.dlinear().param_count((1, 24, 24)) == 1200
    assert ArchSpec.dlinear().param_count((3, 24, 24)) == 1204
    with pytest.raises(ValueError):
        ArchSpec.dlinear(output_projection=False).uses_projection(3)


@pytest.mark.parametrize("arch,dims", ARCHS)
def test_param_grad_matches_finite_differences(arch, dims, rng):
    params = random_params(arch, dims, rng)
    X = rng.normal(size=(4,) + tuple(dims[:2]))
    Y = rng.normal(size=(4, dims.output_len))
    grad = param_grad(params, X, Y) / X.shape[0]

    eps = 1e-6
    numeric = np.empty(params.n_params)
    for k in range(params.n_params):
        step = np.zeros(params.n_params)
        step[k] = eps
        numeric[k] = (mean_loss(params.with_theta(params.theta + step), X, Y)
                      - mean_loss(params.with_theta(params.theta - step), X, Y)) / (2 * eps)
    assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("arch,dims", ARCHS)
def test_jacobian_rows_agree_with_jvp(arch, dims, rng):
    params = random_params(arch, dims, rng)
    X = rng.normal(size=(3,) + tuple(dims[:2]))
    tangent = rng.normal(size=params.n_params)
    jacobians = output_jacobians(params, X)
    assert jacobians.shape == (3, dims.output_len, params.n_params)
    assert_allclose(jacobians @ tangent, jvp(params, X, tangent), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("arch,dims", ARCHS)
def test_loss_hvp_matches_gradient_differences(arch, dims, rng):
    params = random_params(arch, dims, rng)
    X = rng.normal(size=(5,) + tuple(dims[:2]))
    Y = rng.normal(size=(5, dims.output_len))
    tangent = rng.normal(size=params.n_params)

    eps = 1e-5
    plus = param_grad(params.with_theta(params.theta + eps * tangent), X, Y) / 5
    minus = param_grad(params.with_theta(params.theta - eps * tangent), X, Y) / 5
    assert_allclose(loss_hvp(params, X, Y, tangent), (plus - minus) / (2 * eps), rtol=1e-4, atol=1e-7)


def test_linear_kernel_is_scaled_identity(linear_model, rng):
    x_a, x_b = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    expected = float(x_a.ravel() @ x_b.ravel()) * np.eye(3)
    assert_allclose(ntk(linear_model, x_a, x_b), expected, rtol=1e-12)

    proj = make_projector(3, 2)
    assert_allclose(ntk(linear_model, x_a, x_b, proj), proj.A @ expected @ proj.A.T, rtol=1e-12)


def test_single_input_jacobian_and_prediction_shapes(small_mlp, rng):
    x = rng.normal(size=(1, 6))
    assert output_jacobian(small_mlp, x).shape == (4, small_mlp.n_params)
    assert predict(small_mlp, x).shape == (1, 4)


def test_relu_hand_calculation():
    # 1 input, 2 hidden units, 1 output: f = w2 . relu(W1 x + b1) + b2
    arch = ArchSpec.mlp(layers=2, hidden=2)
    params = init_params(arch, ModelDims(1, 1, 1), seed=0)
    theta = np.array([1.0, -1.0, 0.5, 0.5, 2.0, 3.0, 0.25])  # W1, b1, W2, b2
    params = params.with_theta(theta)
    # x = 1: hidden = relu([1.5, -0.5]) = [1.5, 0]; f = 2 * 1.5 + 0.25
    assert predict(params, np.array([[1.0]]))[0, 0] == pytest.approx(3.25)
    assert_allclose(output_jacobian(params, np.array([[1.0]]))[0], [2.0, 0.0, 2.0, 0.0, 1.5, 0.0, 1.0])


def test_loss_value_and_output_gradient():
    value = loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
    assert value.value == pytest.approx(2.5)
    assert_allclose(value.grad_output, [1.0, 2.0])


def test_moving_average_rows_sum_to_one():
    matrix = moving_average_matrix(10, 5)
    assert_allclose(matrix.sum(axis=1), np.ones(10))
    # edge rows replicate the first value
    assert matrix[0, 0] == pytest.approx(3 / 5)


def test_unsupported_loss_and_bad_input_shape(small_mlp):
    with pytest.raises(ValueError, match="unsupported loss"):
        loss_cross_derivative(4, "huber")
    with pytest.raises(ValueError):
        predict(small_mlp, np.zeros((2, 1, 5)))


def test_factory_reuses_instances():
    arch, dims = ArchSpec.mlp(layers=2, hidden=4), ModelDims(1, 3, 2)
    assert ForecasterFactory.create(arch, dims) is ForecasterFactory.create(arch, dims)


def test_kernel_is_symmetric_positive_semidefinite(small_mlp, rng):
    x = rng.normal(size=(1, 6))
    kernel = ntk(small_mlp, x, x)
    assert_allclose(kernel, kernel.T, atol=1e-12)
    assert np.linalg.eigvalsh(kernel).min() > -1e-10


def test_perfect_prediction_has_zero_loss_and_gradient(small_mlp, rng):
    X = rng.normal(size=(3, 1, 6))
    Y = predict(small_mlp, X)
    assert loss(Y[0], Y[0]).value == 0.0
    assert_array_equal(param_grad(small_mlp, X, Y), np.zeros(small_mlp.n_params))
