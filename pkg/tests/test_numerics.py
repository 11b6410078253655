import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import rosen, rosen_der

from src.components.numerics import (PsdOperator, cg_solve, cubic_real_roots, cubic_real_roots_vec,
                                     finite_diff_grad, lbfgs_minimize, power_method, quadratic_real_roots,
                                     soft_threshold)
from src.utils import DimensionError


def _spd(rng, eigenvalues):
    q, _ = np.linalg.qr(rng.standard_normal((len(eigenvalues), len(eigenvalues))))
    return q @ np.diag(eigenvalues) @ q.T


def test_power_method_known_spectrum(rng):
    matrix = _spd(rng, [5.0, 2.0, 1.0, 0.5])
    op = PsdOperator(lambda u: matrix @ u, 4, float)
    eig, vec = power_method(op, iters=300, seed=1)
    assert eig == pytest.approx(5.0, rel=1e-10)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    np.testing.assert_allclose(matrix @ vec, 5.0 * vec, atol=1e-8)


def test_power_method_zero_operator():
    eig, vec = power_method(PsdOperator(lambda u: 0 * u, 3), iters=5)
    assert eig == 0.0
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_operator_checks_dimension():
    op = PsdOperator(lambda u: u, 3)
    with pytest.raises(DimensionError):
        op(np.ones(4))


def test_cg_matches_direct_solve(rng):
    matrix = _spd(rng, np.linspace(1, 10, 8))
    rhs = rng.standard_normal(8)
    result = cg_solve(PsdOperator(lambda u: matrix @ u, 8, float), rhs, iters=50, tol=1e-12)
    assert result.converged
    np.testing.assert_allclose(result.x, np.linalg.solve(matrix, rhs), rtol=1e-9)
    assert result.residual_history[-1] <= 1e-12 * np.linalg.norm(rhs)


def test_cg_hermitian_complex(rng):
    a = rng.standard_normal((10, 5)) + 1j * rng.standard_normal((10, 5))
    gram = a.conj().T @ a
    rhs = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    result = cg_solve(PsdOperator(lambda u: gram @ u, 5), rhs, iters=30, tol=1e-12)
    np.testing.assert_allclose(result.x, np.linalg.solve(gram, rhs), rtol=1e-8)


def test_quadratic_roots():
    assert quadratic_real_roots(1, -3, 2) == pytest.approx([1, 2])
    assert quadratic_real_roots(1, 0, 1) == []
    assert quadratic_real_roots(0, 2, -4) == [2.0]


def test_cubic_three_real_roots():
    assert cubic_real_roots(1, -6, 11, -6) == pytest.approx([1, 2, 3], abs=1e-12)


def test_cubic_one_real_root():
    assert cubic_real_roots(1, 0, 1, -2) == pytest.approx([1.0], abs=1e-12)
    assert cubic_real_roots(2, 0, 0, 16) == pytest.approx([-2.0], abs=1e-12)


def test_cubic_triple_root():
    assert cubic_real_roots(1, -3, 3, -1) == pytest.approx([1, 1, 1], abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.5, 4))
def test_cubic_roots_satisfy_polynomial(roots, lead):
    coeffs = lead * np.poly(roots)
    found = cubic_real_roots(*coeffs)
    assert len(found) >= 1
    for m in found:
        assert abs(np.polyval(coeffs, m)) <= 1e-8 * max(1.0, np.max(np.abs(coeffs))) * max(1.0, abs(m)) ** 3


def test_cubic_vectorized_shape():
    roots = cubic_real_roots_vec(np.ones(4), np.zeros(4), np.ones(4), -np.arange(4.0))
    assert roots.shape == (4, 3)
    assert np.all(np.isfinite(roots[:, 0]))
    assert np.all(np.isnan(roots[:, 1:]))


def test_soft_threshold_keeps_phase():
    z = np.array([2 * np.exp(0.3j), 0.5, -3.0])
    out = soft_threshold(z, 1.0)
    np.testing.assert_allclose(out, [np.exp(0.3j), 0.0, -2.0])
    assert soft_threshold(0.0, 1.0) == 0.0


def test_finite_diff_grad_known_function():
    grad = finite_diff_grad(lambda x: float(np.sum(np.abs(x) ** 2)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(grad, [2.0, -4.0], rtol=1e-8)


def test_lbfgs_minimizes_quadratic(rng):
    matrix = _spd(rng, [1.0, 2.0, 4.0, 8.0, 16.0])
    target = rng.standard_normal(5)
    seen = []
    result = lbfgs_minimize(lambda x: (0.5 * (x - target) @ matrix @ (x - target), matrix @ (x - target)),
                            np.zeros(5), n_iters=50, callback=lambda k, x: seen.append(k))
    np.testing.assert_allclose(result.x, target, atol=1e-6)
    assert seen == list(range(1, result.iterations + 1))
    assert all(b <= a + 1e-12 for a, b in zip(result.costs, result.costs[1:]))


def test_lbfgs_zero_gradient_start_returns_start():
    x0 = np.array([1.0, 1.0])
    result = lbfgs_minimize(lambda x: (rosen(x), rosen_der(x)), x0)
    np.testing.assert_array_equal(result.x, x0)
    assert result.converged and result.iterations == 0


def test_lbfgs_rosenbrock():
    result = lbfgs_minimize(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0]), memory=10, n_iters=200)
    assert result.iterations <= 200
    assert result.costs[-1] < 1e-6
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-2)
    costs = np.array(result.costs)
    assert np.all(np.diff(costs) <= 0)
