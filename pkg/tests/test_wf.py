import numpy as np
import pytest

from src.components.forward_models import DenseModel, FieldTag
from src.components.objectives import (GaussianObjective, HuberTV, PoissonObjective, fisher_marginal_poisson,
                                       total_gradient)
from src.components.wf import (StepKind, StepRule, TruncationRule, run_wf, step_backtracking, step_exact_gaussian,
                               step_fisher, step_fisher_reg, truncation_mask)
from src.utils import NumericalError


@pytest.fixture
def small_poisson(complex_model, rng):
    y = rng.poisson(1.5, complex_model.rows).astype(float)
    x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    return PoissonObjective(complex_model, y), x


def test_step_fisher_identity_example():
    obj = PoissonObjective(DenseModel(np.eye(1), background=1.0), np.array([0.0]), FieldTag.REAL)
    x = np.array([1.0])
    assert step_fisher(obj, x, obj.gradient(x)) == pytest.approx(0.5)


def test_step_fisher_ignores_gradient_magnitude(small_poisson):
    obj, x = small_poisson
    grad = obj.gradient(x)
    assert step_fisher(obj, x, 7.5 * grad) == pytest.approx(step_fisher(obj, x, grad), rel=1e-12)


def test_step_fisher_matches_densified_information(small_poisson):
    obj, x = small_poisson
    grad = obj.gradient(x)
    a = obj.model.densify()
    info = a.conj().T @ (fisher_marginal_poisson(obj.model.apply(x), obj.b)[:, None] * a)
    expected = np.vdot(grad, grad).real / np.vdot(grad, info @ grad).real
    assert step_fisher(obj, x, grad) == pytest.approx(expected, rel=1e-10)


def test_step_fisher_zero_gradient():
    obj = PoissonObjective(DenseModel(np.eye(2), background=0.1), np.ones(2))
    with pytest.raises(NumericalError):
        step_fisher(obj, np.ones(2), np.zeros(2))


def test_step_fisher_reg_reduces_without_strength(small_poisson):
    obj, x = small_poisson
    grad = obj.gradient(x)
    reg = HuberTV.for_signal(6, beta=0.0)
    assert step_fisher_reg(obj, reg, x, grad) == pytest.approx(step_fisher(obj, x, grad), rel=1e-15)


def test_step_fisher_reg_matches_densified_hessian(small_poisson):
    obj, x = small_poisson
    reg = HuberTV.for_signal(6, beta=4.0, alpha=0.1)
    grad = total_gradient(obj, reg, x)
    a = obj.model.densify()
    t = np.column_stack([reg.diff_op.forward(col) for col in np.eye(6)])
    hessian = (a.conj().T @ (fisher_marginal_poisson(obj.model.apply(x), obj.b)[:, None] * a)
               + reg.beta * t.T @ (reg.weights(x)[:, None] * t))
    expected = np.vdot(grad, grad).real / np.vdot(grad, hessian @ grad).real
    assert step_fisher_reg(obj, reg, x, grad) == pytest.approx(expected, rel=1e-10)


def test_backtracking_hand_traced():
    rule = StepRule(kind=StepKind.BACKTRACKING, shrink=0.5, sufficient_decrease=0.1, initial_step=1.0)
    mu, ok = step_backtracking(lambda z: float(np.sum(np.abs(z) ** 2)), np.array([1.0]), np.array([2.0]), rule)
    assert (mu, ok) == (0.5, True)


def test_backtracking_exhausted_flags():
    rule = StepRule(kind=StepKind.BACKTRACKING, max_trials=3)
    # ascent direction: no step can decrease the cost
    mu, ok = step_backtracking(lambda z: float(np.sum(z ** 2)), np.array([1.0]), np.array([-1.0]), rule)
    assert not ok
    assert mu == pytest.approx(0.25)


def test_backtracking_zero_gradient():
    with pytest.raises(NumericalError):
        step_backtracking(lambda z: 0.0, np.ones(2), np.zeros(2))


def test_step_rule_ranges():
    with pytest.raises(ValueError):
        StepRule(shrink=1.5)
    with pytest.raises(ValueError):
        StepRule(sufficient_decrease=0.0)


def test_exact_gaussian_one_dimensional():
    obj = GaussianObjective(DenseModel(np.array([[1.0]])), np.array([1.0]), FieldTag.REAL)
    x = np.array([2.0])
    grad = obj.gradient(x)
    mu = step_exact_gaussian(obj, x, grad)
    assert mu == pytest.approx(1 / 24)
    assert abs((x - mu * grad)[0]) == pytest.approx(1.0)


def test_exact_gaussian_beats_grid(rng):
    model = DenseModel.gaussian(16, 4, seed=6)
    obj = GaussianObjective(model, rng.poisson(2.0, 16).astype(float))
    x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    grad = obj.gradient(x)
    mu = step_exact_gaussian(obj, x, grad)
    grid = np.linspace(0, max(3 * mu, 1e-2), 10_000)
    best = min(obj.cost(x - m * grad) for m in grid)
    assert obj.cost(x - mu * grad) <= best + 1e-9 * max(1.0, abs(best))


def test_truncation_limits(small_poisson):
    obj, x = small_poisson
    mask = truncation_mask(obj, x, np.inf)
    assert mask.all()
    np.testing.assert_array_equal(obj.gradient(x, mask), obj.gradient(x))
    with pytest.raises(NumericalError):
        truncation_mask(obj, np.zeros(6), 5.0)


def test_truncation_zero_threshold_keeps_exact_fits():
    model = DenseModel(np.eye(3))
    obj = PoissonObjective(model, np.array([1.0, 2.0, 4.0]), FieldTag.REAL)
    mask = truncation_mask(obj, np.array([1.0, 1.0, 2.0]), 0.0)
    np.testing.assert_array_equal(mask, [True, False, True])


def test_run_wf_zero_iterations(small_poisson):
    obj, x = small_poisson
    state = run_wf(obj, None, StepRule(), TruncationRule(), x, 0)
    np.testing.assert_array_equal(state.x, x)
    assert len(state.trace) == 0


def test_run_wf_fisher_converges_on_noiseless_data(noiseless_problem):
    obj, x_true = noiseless_problem
    x0 = x_true + 0.1 * np.random.default_rng(0).standard_normal(16)
    state = run_wf(obj, None, StepRule(), TruncationRule(), x0, 500, x_true=x_true)
    target = obj.cost(x_true)
    assert (state.trace.costs[-1] - target) / abs(target) < 1e-4
    assert state.status == "completed"
    increases = np.sum(np.diff(state.trace.costs) > 0)
    assert increases <= 0.05 * len(state.trace)


def test_run_wf_backtracking_is_monotone(noiseless_problem):
    obj, x_true = noiseless_problem
    x0 = x_true + 0.3 * np.random.default_rng(1).standard_normal(16)
    state = run_wf(obj, None, StepRule(kind=StepKind.BACKTRACKING), TruncationRule(), x0, 60)
    costs = np.concatenate([[obj.cost(x0)], state.trace.costs])
    assert np.all(np.diff(costs) <= 1e-12 * np.abs(costs[:-1]))


def test_run_wf_exact_gaussian_never_increases(noiseless_problem):
    obj, x_true = noiseless_problem
    gauss = GaussianObjective(obj.model, obj.y, FieldTag.REAL)
    x0 = x_true + 0.3 * np.random.default_rng(2).standard_normal(16)
    state = run_wf(gauss, None, StepRule(kind=StepKind.EXACT_GAUSSIAN), TruncationRule(), x0, 40)
    costs = np.concatenate([[gauss.cost(x0)], state.trace.costs])
    assert np.all(np.diff(costs) <= 1e-9 * np.abs(costs[:-1]))


def test_run_wf_reports_on_trace_objective(noiseless_problem):
    obj, x_true = noiseless_problem
    gauss = GaussianObjective(obj.model, obj.y, FieldTag.REAL)
    state = run_wf(gauss, None, StepRule(kind=StepKind.EXACT_GAUSSIAN), TruncationRule(), x_true + 0.2, 5,
                   trace_objective=obj)
    assert state.trace.costs[-1] == pytest.approx(obj.cost(state.x))


def test_run_wf_degenerate_start_stops_with_status():
    obj = PoissonObjective(DenseModel.gaussian(20, 3, seed=0, background=0.1), np.ones(20))
    state = run_wf(obj, None, StepRule(), TruncationRule(), np.zeros(3), 10)
    assert state.status.startswith("failed")
    assert len(state.trace) == 0


def test_run_wf_nonnegative_field_is_clamped(noiseless_problem):
    obj, x_true = noiseless_problem
    nonneg = PoissonObjective(obj.model, obj.y, FieldTag.REAL_NONNEGATIVE)
    state = run_wf(nonneg, None, StepRule(), TruncationRule(), np.abs(x_true), 20)
    assert np.all(state.x.real >= 0) and np.all(state.x.imag == 0)


def test_all_kept_truncation_matches_plain_wf(noiseless_problem):
    obj, x_true = noiseless_problem
    x0 = x_true + 0.2
    plain = run_wf(obj, None, StepRule(), TruncationRule(), x0, 15)
    kept = run_wf(obj, None, StepRule(), TruncationRule(enabled=True, a_h=np.inf), x0, 15)
    np.testing.assert_array_equal(plain.trace.costs, kept.trace.costs)


def test_regularized_wf_runs(real_instance):
    model, x_true, y = real_instance
    obj = PoissonObjective(model, y, FieldTag.REAL)
    reg = HuberTV.for_signal(model.cols, beta=1.0, alpha=0.1)
    state = run_wf(obj, reg, StepRule(), TruncationRule(), x_true, 20, x_true=x_true)
    assert state.status == "completed" and len(state.trace) == 20
    assert np.all(np.isfinite(state.trace.costs))


def test_fully_truncated_gradient_is_a_fixed_point(real_instance):
    model, x_true, y = real_instance
    obj = PoissonObjective(model, y, FieldTag.REAL)
    x0 = x_true + 0.1
    state = run_wf(obj, None, StepRule(), TruncationRule(enabled=True, a_h=0.0), x0, 6)
    assert state.status == "stationary: no measurement passes truncation"
    assert state.trace.to_frame()["iter"].tolist() == list(range(1, 7))
    np.testing.assert_allclose(state.trace.costs, obj.cost(x0))
    np.testing.assert_array_equal(state.x, x0)
    assert state.info["kept_fraction"] == 0.0


def test_truncated_run_reports_kept_fraction(noiseless_problem):
    obj, x_true = noiseless_problem
    state = run_wf(obj, None, StepRule(), TruncationRule(enabled=True, a_h=np.inf), x_true + 0.2, 4)
    assert state.status == "completed"
    assert state.info["kept_fraction"] == 1.0
    assert "kept_fraction" not in run_wf(obj, None, StepRule(), TruncationRule(), x_true + 0.2, 4).info
