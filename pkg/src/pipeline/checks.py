"""Self-checks of the solver invariants, run by the ``check`` command outside pytest."""
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List

import numpy as np

from src.components.admm import magnitude_lagrangian, update_v_magnitude_b0, update_v_magnitude_bpos
from src.components.forward_models import (CanonicalDftModel, DenseModel, FieldTag, FileMatrixModel, MaskedDftModel,
                                           cross_reference, make_masks, write_matrix_csv)
from src.components.init_eval import finalize_init, nrmse, phase_correct, scale_fit, spectral_init
from src.components.mm import CurvatureGrid, curvature_improved, curvature_max, curvature_optimal_numeric
from src.components.numerics import finite_diff_grad
from src.components.objectives import (GaussianObjective, HuberTV, PoissonObjective, fisher_marginal_poisson,
                                       psi, psi_dot, total_cost, total_gradient)
from src.utils import save_json

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float = 0.0
    details: Dict = field(default_factory=dict)


def _sweep(rng, n):
    y = rng.uniform(0, 20, n)
    y[y == 0] = 20.0
    b = rng.uniform(0.05, 5, n)
    s = rng.uniform(-10, 10, n)
    return y, b, s


def check_majorizer_domination(rng, samples: int = 10_000, points: int = 401) -> CheckResult:
    y, b, s = (a[:, None] for a in _sweep(rng, samples))
    r = np.linspace(-20, 20, points)[None, :]
    c = curvature_improved(s, y, b)
    phi_r = psi(r, y, b).real
    slope = psi_dot(s, y, b).real
    surrogate = psi(s, y, b).real + slope * (r - s) + 0.5 * c * (r - s) ** 2
    worst = float(np.min(surrogate - phi_r))
    return CheckResult("majorizer_domination", worst >= -1e-9,
                       details={"min_gap": worst, "samples": samples})


def check_curvature_ordering(rng, samples: int = 10_000, optimal_samples: int = 200) -> CheckResult:
    y, b, s = _sweep(rng, samples)
    c_imp = curvature_improved(s, y, b)
    c_max = curvature_max(y, b)
    lower = float(np.min(c_imp - 2))
    upper = float(np.max(c_imp - c_max))
    peak_err = float(np.max(np.abs(curvature_improved(np.sqrt(3 * b), y, b) - c_max)))
    idx = rng.choice(samples, size=min(optimal_samples, samples), replace=False)
    c_opt = curvature_optimal_numeric(s[idx], y[idx], b[idx], CurvatureGrid())
    opt_excess = float(np.max(c_opt - c_imp[idx]))
    passed = lower >= -1e-12 and upper <= 1e-12 and peak_err <= 1e-12 and opt_excess <= 1e-6
    return CheckResult("curvature_ordering", passed,
                       details={"min_c_imp_minus_2": lower, "max_c_imp_minus_c_max": upper,
                                "peak_error": peak_err, "max_c_opt_minus_c_imp": opt_excess})


def check_fisher_monte_carlo(rng, pairs: int = 20, draws: int = 100_000) -> CheckResult:
    """E|psi_dot|^2 over Poisson draws against 4|v|^2/(|v|^2+b), within 4 standard errors."""
    worst = 0.0
    for _ in range(pairs):
        v = complex(rng.uniform(0.1, 2.0) * np.exp(1j * rng.uniform(0, 2 * np.pi)))
        b = rng.uniform(0.05, 2.0)
        y = rng.poisson(abs(v) ** 2 + b, size=draws)
        score = np.abs(psi_dot(v, y, b)) ** 2
        se = score.std(ddof=1) / np.sqrt(draws)
        worst = max(worst, abs(score.mean() - fisher_marginal_poisson(v, b)) / se)
    return CheckResult("fisher_monte_carlo", worst <= 4.0, details={"max_z_score": worst, "pairs": pairs})


def check_fisher_vs_hessian(rng, pairs: int = 20, draws: int = 20_000) -> CheckResult:
    """Report: the marginal Hessian averages to the Fisher information but is often negative."""
    rows = []
    worst = 0.0
    for _ in range(pairs):
        v = rng.uniform(0.05, 2.0)
        b = rng.uniform(0.05, 2.0)
        # every row of the all-ones model measures the same v
        obj = PoissonObjective(DenseModel(np.ones((draws, 1)), background=b),
                               rng.poisson(v ** 2 + b, size=draws).astype(float), FieldTag.REAL)
        s = obj.model.apply(np.array([v]))
        hess = obj.hessian_marginal(s)
        fisher = float(obj.fisher_marginal(s)[0])
        z = abs(hess.mean() - fisher) / (hess.std(ddof=1) / np.sqrt(draws))
        worst = max(worst, z)
        rows.append({"v": v, "b": b, "fisher": fisher, "mean_hessian": float(hess.mean()),
                     "negative_fraction": float(np.mean(hess < 0))})
    return CheckResult("fisher_vs_hessian", worst <= 4.0, details={"max_z_score": worst, "table": rows})


def check_gradients(rng, instances: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(3, 9))
        model = DenseModel.gaussian(4 * n, n, seed=int(rng.integers(1 << 31)), complex_valued=False,
                                    background=rng.uniform(0.1, 1.0))
        x = rng.standard_normal(n)
        y = rng.poisson(np.abs(model.apply(x)) ** 2 + model.background).astype(float)
        tv = HuberTV.for_signal(n, beta=rng.uniform(0.5, 5), alpha=0.1)
        for obj, reg in ((PoissonObjective(model, y, FieldTag.REAL), None),
                         (GaussianObjective(model, y, FieldTag.REAL), None),
                         (PoissonObjective(model, y, FieldTag.REAL), tv)):
            analytic = total_gradient(obj, reg, x).real
            numeric = finite_diff_grad(lambda z: total_cost(obj, reg, z), x, eps=1e-6)
            worst = max(worst, np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))
    return CheckResult("gradient_finite_difference", worst < 1e-4, details={"max_relative_error": float(worst)})


def check_admm_magnitudes(rng, draws: int = 10_000) -> CheckResult:
    t = rng.uniform(0, 5, draws)
    y = rng.uniform(0, 10, draws)
    b = rng.uniform(0.01, 3, draws)
    rho = float(rng.uniform(0.5, 16))
    m = update_v_magnitude_bpos(t, y, b, rho)
    cubic = ((2 + rho) * m ** 3 - rho * t * m ** 2 + (2 * b - 2 * y + rho * b) * m - rho * b * t) / (2 + rho)
    m0 = update_v_magnitude_b0(t, y, rho)
    quad = ((2 + rho) * m0 ** 2 - rho * t * m0 - 2 * y) / (2 + rho)

    mismatches = 0
    for i in range(draws):
        roots = np.roots([2 + rho, -rho * t[i], 2 * b[i] - 2 * y[i] + rho * b[i], -rho * b[i] * t[i]])
        real = roots[(np.abs(roots.imag) < 1e-7) & (roots.real > -1e-12)].real.clip(min=0)
        brute = np.min(magnitude_lagrangian(real, t[i], y[i], b[i], rho))
        if magnitude_lagrangian(m[i], t[i], y[i], b[i], rho) > brute + 1e-9 * max(1.0, abs(brute)):
            mismatches += 1
    continuity = float(np.max(np.abs(update_v_magnitude_bpos(t, y, 1e-12, rho) - m0)))
    details = {"max_cubic_residual": float(np.max(np.abs(cubic))), "max_quadratic_residual":
               float(np.max(np.abs(quad))), "selection_mismatches": mismatches, "b0_continuity": continuity}
    passed = details["max_cubic_residual"] < 1e-9 and details["max_quadratic_residual"] < 1e-9 \
        and mismatches == 0 and continuity < 1e-4
    return CheckResult("admm_magnitudes", passed, details=details)


def _adjoint_gap(model, rng) -> float:
    x = rng.standard_normal(model.cols) + 1j * rng.standard_normal(model.cols)
    v = rng.standard_normal(model.rows) + 1j * rng.standard_normal(model.rows)
    lhs = np.vdot(model.apply_linear(x), v)
    rhs = np.vdot(x, model.adjoint(v))
    scale = np.linalg.norm(model.apply_linear(x)) * np.linalg.norm(v)
    return float(abs(lhs - rhs) / scale)


def dft_matrix(size: int, length: int) -> np.ndarray:
    k = np.arange(size)[:, None]
    n = np.arange(length)[None, :]
    return np.exp(-2j * np.pi * k * n / size)


def check_adjoints(rng) -> CheckResult:
    n = 6
    dense = DenseModel.gaussian(16, n, seed=int(rng.integers(1 << 31)))
    masks = make_masks(n, 3, seed=int(rng.integers(1 << 31)))
    masked = MaskedDftModel(masks)
    canonical = CanonicalDftModel((2, 3), cross_reference(2, 3))
    gaps, entry_errors = {}, {}
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "matrix.csv")
        write_matrix_csv(dense.entries, path)
        from_file = FileMatrixModel(path)
        for model in (dense, from_file, masked, canonical):
            gaps[model.variant] = _adjoint_gap(model, rng)

        fourier = dft_matrix(2 * n - 1, n)
        explicit = {
            "dense": dense.entries,
            "file": dense.entries,
            "masked_dft": np.vstack([fourier * m[None, :] for m in masks]),
            "canonical_dft": np.kron(dft_matrix(canonical.fft_dims[0], 2),
                                     dft_matrix(canonical.fft_dims[1], 3)),
        }
        for model in (dense, from_file, masked, canonical):
            entry_errors[model.variant] = float(np.max(np.abs(model.densify() - explicit[model.variant])))
    passed = max(gaps.values()) < 1e-10 and max(entry_errors.values()) < 1e-12
    return CheckResult("adjoint_fidelity", passed, details={"adjoint_gaps": gaps, "entry_errors": entry_errors})


def check_initialization(rng) -> CheckResult:
    identity = DenseModel(np.eye(4))
    y = np.array([0.0, 3.0, 1.0, 0.0])
    x0 = spectral_init(identity, y, seed=int(rng.integers(1 << 31)))
    basis_error = float(abs(abs(x0.values[1]) - 1.0))
    alpha = scale_fit(DenseModel(np.eye(2)), np.array([4.0, 0.0]), np.array([1.0, 0.0]))
    final = finalize_init(np.array([-1.0, 2.0]), 2.0, FieldTag.REAL_NONNEGATIVE)
    x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    phase_errors = [nrmse(np.exp(1j * theta) * x, x) for theta in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    corrected = phase_correct(np.exp(0.7j) * x, x)
    details = {"basis_error": basis_error, "alpha": alpha, "finalized": final.values.real.tolist(),
               "max_phase_nrmse": float(max(phase_errors)),
               "corrected_error": float(np.max(np.abs(corrected - x)))}
    passed = basis_error < 1e-12 and abs(alpha - 2.0) < 1e-15 and details["finalized"] == [2.0, 4.0] \
        and details["max_phase_nrmse"] < 1e-14 and details["corrected_error"] < 1e-13
    return CheckResult("initialization", passed, details=details)


CHECKS: Dict[str, Callable[[np.random.Generator], CheckResult]] = {
    "majorizer_domination": check_majorizer_domination,
    "curvature_ordering": check_curvature_ordering,
    "fisher_monte_carlo": check_fisher_monte_carlo,
    "fisher_vs_hessian": check_fisher_vs_hessian,
    "gradient_finite_difference": check_gradients,
    "admm_magnitudes": check_admm_magnitudes,
    "adjoint_fidelity": check_adjoints,
    "initialization": check_initialization,
}


def run_checks(seed: int = 0, names: List[str] = None, report_path: str = None) -> Dict:
    """Run the named checks (all by default); optionally write a JSON report."""
    results = []
    for name in names or list(CHECKS):
        rng = np.random.default_rng(seed)
        started = time.perf_counter()
        try:
            result = CHECKS[name](rng)
        except Exception as e:
            logger.error(f"Check {name} raised: {str(e)}")
            result = CheckResult(name, False, details={"error": str(e)})
        result.seconds = time.perf_counter() - started
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, f"check {name}: {'passed' if result.passed else 'FAILED'} ({result.seconds:.2f}s)")
        results.append(result)

    report = {"seed": seed, "passed": all(r.passed for r in results), "checks": [asdict(r) for r in results]}
    if report_path:
        save_json(report, report_path)
    return report
