import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.components.forward_models import DenseModel, FieldTag
from src.components.numerics import finite_diff_grad, soft_threshold
from src.components.objectives import (FiniteDifference, GaussianObjective, HuberTV, L1Penalty, PoissonObjective,
                                       fisher_marginal_gaussian, fisher_marginal_poisson, huber, huber_dot,
                                       huber_weight, psi, psi_ddot, psi_dot, reg_cost, reg_gradient, total_cost,
                                       total_gradient)
from src.utils import DimensionError, DomainError


def test_psi_values():
    assert psi(1.0, 2.0, 1.0) == pytest.approx(2 - 2 * np.log(2))
    assert psi(0.0, 0.0, 0.0) == 0.0
    assert psi(2.0, 0.0, 0.5) == pytest.approx(4.5)


def test_psi_domain_error_at_zero_mean():
    with pytest.raises(DomainError):
        psi(0.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        psi_ddot(0.0, 1.0, 0.0)


def test_psi_dot_vanishes_at_data_fit():
    assert psi_dot(1.0, 2.0, 1.0) == 0.0
    assert psi_dot(1j, 0.0, 0.3) == 2j


def test_psi_ddot_is_derivative_of_psi_dot():
    v, y, b, h = 0.8, 3.0, 0.4, 1e-6
    numeric = (psi_dot(v + h, y, b) - psi_dot(v - h, y, b)).real / (2 * h)
    assert psi_ddot(v, y, b) == pytest.approx(numeric, rel=1e-7)


def test_fisher_marginals():
    assert fisher_marginal_poisson(1.0, 1.0) == pytest.approx(2.0)
    assert fisher_marginal_poisson(0.0, 0.0) == 0.0
    assert fisher_marginal_gaussian(1.0, 1.0) == pytest.approx(32.0)


def test_poisson_objective_marginal_curvatures():
    model = DenseModel(np.eye(3), background=np.array([0.5, 1.0, 2.0]))
    y = np.array([0.0, 3.0, 1.0])
    obj = PoissonObjective(model, y, FieldTag.REAL)
    v = np.array([0.2, -1.0, 1.5])
    np.testing.assert_allclose(obj.hessian_marginal(v), psi_ddot(v, y, model.background))
    np.testing.assert_allclose(obj.fisher_marginal(v), fisher_marginal_poisson(v, model.background))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 2.0))
def test_huber_bounds(t, alpha):
    assert 0 <= huber(t, alpha) <= 0.5 * t * t + 1e-12
    assert abs(huber_dot(t, alpha)) <= alpha + 1e-12
    assert 0 < huber_weight(t, alpha) <= 1


def test_huber_weight_times_t_is_huber_dot():
    t = np.array([-3.0, -0.05, 0.0, 0.02, 4.0])
    np.testing.assert_allclose(huber_weight(t, 0.1) * t, huber_dot(t, 0.1).real)


@pytest.mark.parametrize("dims", [None, (3, 4)])
def test_finite_difference_adjoint(dims, rng):
    op = FiniteDifference(12, dims)
    x = rng.standard_normal(12)
    z = rng.standard_normal(op.rows)
    assert np.dot(op.forward(x), z) == pytest.approx(np.dot(x, op.adjoint(z)))


def test_finite_difference_dims_must_match():
    with pytest.raises(DimensionError):
        FiniteDifference(10, (3, 4))


def test_objective_rejects_wrong_measurement_length(complex_model):
    with pytest.raises(DimensionError):
        PoissonObjective(complex_model, np.zeros(complex_model.rows + 1))


@pytest.mark.parametrize("objective", [PoissonObjective, GaussianObjective])
def test_real_gradients_match_finite_differences(objective, real_instance):
    model, x_true, y = real_instance
    obj = objective(model, y, FieldTag.REAL)
    x = x_true + 0.3
    numeric = finite_diff_grad(obj.cost, x, eps=1e-6)
    np.testing.assert_allclose(obj.gradient(x).real, numeric, rtol=1e-4, atol=1e-6 * np.abs(numeric).max())


def test_complex_gradient_matches_finite_differences(complex_model, rng):
    y = rng.poisson(1.0, complex_model.rows).astype(float)
    obj = PoissonObjective(complex_model, y)
    x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    numeric = finite_diff_grad(obj.cost, x, eps=1e-6, complex_field=True)
    np.testing.assert_allclose(obj.gradient(x), numeric, rtol=1e-5, atol=1e-6)


def test_regularized_gradient_matches_finite_differences(real_instance):
    model, x_true, y = real_instance
    obj = PoissonObjective(model, y, FieldTag.REAL)
    reg = HuberTV.for_signal(model.cols, beta=2.0, alpha=0.1)
    x = x_true * 1.1
    numeric = finite_diff_grad(lambda z: total_cost(obj, reg, z), x)
    np.testing.assert_allclose(total_gradient(obj, reg, x).real, numeric, rtol=1e-4, atol=1e-6)


def test_huber_tv_value_and_penalty():
    reg = HuberTV.for_signal(4, beta=3.0, alpha=0.1)
    x = np.array([0.0, 1.0, 1.0, 1.05])
    expected = (0.1 * 1.0 - 0.005) + 0.0 + 0.5 * 0.05 ** 2
    assert reg_cost(x, reg) == pytest.approx(expected)
    assert reg.penalty(x) == pytest.approx(3 * expected)
    np.testing.assert_allclose(reg_gradient(x, reg), reg.gradient(x))


def test_huber_tv_is_zero_on_constants():
    reg = HuberTV.for_signal(6, dims=(2, 3))
    assert reg.value(np.full(6, 2.5)) == 0.0
    np.testing.assert_allclose(reg.gradient(np.full(6, 2.5)), 0.0)


def test_l1_penalty_prox_is_soft_threshold():
    reg = L1Penalty(beta=0.5)
    z = np.array([1.0, -0.2, 3j])
    np.testing.assert_allclose(reg.prox(z, 2.0), soft_threshold(z, 1.0))
    assert reg.penalty(z) == pytest.approx(0.5 * 4.2)


def test_l1_has_no_gradient(real_instance):
    model, x_true, y = real_instance
    obj = PoissonObjective(model, y, FieldTag.REAL)
    with pytest.raises(TypeError):
        total_gradient(obj, L1Penalty(1.0), x_true)


def test_truncated_gradient_with_full_mask(complex_model, rng):
    obj = GaussianObjective(complex_model, rng.poisson(2.0, complex_model.rows))
    x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    np.testing.assert_array_equal(obj.gradient(x, np.ones(complex_model.rows, dtype=bool)), obj.gradient(x))
    np.testing.assert_array_equal(obj.gradient(x, np.zeros(complex_model.rows, dtype=bool)), 0)


def test_noiseless_truth_is_stationary():
    model = DenseModel.gaussian(30, 4, seed=0, background=0.1)
    x = np.array([1.0, -0.5, 0.2j, 0.3])
    y = np.abs(model.apply(x)) ** 2 + model.background
    np.testing.assert_allclose(PoissonObjective(model, y).gradient(x), 0, atol=1e-12)
