"""Majorize-minimize iterations for the Poisson cost.

Each outer step builds a separable quadratic majorizer of the Poisson marginals at
s = A x_k and minimizes it (plus the regularizer) with an inner solver.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.linalg

from src.components.forward_models import FieldTag, ForwardModel, project_to_field
from src.components.init_eval import RunState, TraceRecorder
from src.components.numerics import PsdOperator, cg_solve, power_method
from src.components.objectives import (HuberTV, L1Penalty, PoissonObjective, Regularizer, huber_weight,
                                       psi_dot, real_part_if, total_cost)
from src.utils import DomainError, NumericalError

logger = logging.getLogger(__name__)


class CurvatureKind(str, Enum):
    MAX = "max"
    IMPROVED = "improved"
    OPTIMAL_NUMERIC = "optimal_numeric"


@dataclass
class CurvatureGrid:
    """r in [-R, R] with R = max(range_floor, range_multiple*|s|, background_multiple*sqrt(b))."""

    range_floor: float = 20.0
    range_multiple: float = 4.0
    background_multiple: float = 8.0
    points: int = 4001
    exclusion: float = 1e-8
    chunk_size: int = 256


@dataclass
class InnerConfig:
    direct_threshold: int = 64
    cg_iters: int = 30
    cg_tol: float = 1e-9
    max_iters: int = 50
    tol: float = 1e-8
    power_iters: int = 50
    lipschitz_safety: float = 1.05


def _require_positive_background(b, name: str) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise DomainError(f"{name}: needs b > 0; no quadratic majorizer exists when b = 0 and y > 0")
    return b


def curvature_max(y, b) -> np.ndarray:
    """2 + y/(4b), the maximum of the marginal second derivative."""
    b = _require_positive_background(b, "curvature_max")
    return 2 + np.asarray(y, dtype=float) / (4 * b)


def curvature_improved(s, y, b):
    """psi_ddot at the positive root u of -|s|u^2 + 2bu + b|s| (2 at s = 0), evaluated at |s|."""
    b = _require_positive_background(b, "curvature_improved")
    a2 = np.abs(np.asarray(s)) ** 2
    root = np.sqrt(b * b + b * a2)
    out = 2 + np.asarray(y, dtype=float) * a2 * (b + root) / (b * (b + a2 + root) ** 2)
    return out.item() if np.ndim(out) == 0 else out


def _phi(r, y, b):
    mean = r * r + b
    return mean - y * np.log(mean)


def curvature_optimal_numeric(s, y, b, grid: CurvatureGrid = CurvatureGrid()):
    """Sharpest curvature: sup over a grid of r != s of 2(phi(r) - phi(s) - phi'(s)(r-s))/(r-s)^2."""
    b_arr = _require_positive_background(b, "curvature_optimal_numeric")
    s_abs, y_arr, b_arr = np.broadcast_arrays(np.abs(np.asarray(s)), np.asarray(y, dtype=float), b_arr)
    shape = s_abs.shape
    s_abs, y_arr, b_arr = (np.atleast_1d(a).ravel() for a in (s_abs, y_arr, b_arr))
    unit = np.linspace(-1.0, 1.0, grid.points)
    out = np.empty(s_abs.size)

    for start in range(0, s_abs.size, grid.chunk_size):
        sl = slice(start, start + grid.chunk_size)
        sc, yc, bc = s_abs[sl, None], y_arr[sl, None], b_arr[sl, None]
        radius = np.maximum.reduce([np.full_like(sc, grid.range_floor), grid.range_multiple * sc,
                                    grid.background_multiple * np.sqrt(bc)])
        r = unit[None, :] * radius
        dr = r - sc
        slope = 2 * sc * (1 - yc / (sc * sc + bc))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = 2 * (_phi(r, yc, bc) - _phi(sc, yc, bc) - slope * dr) / dr ** 2
        ratio = np.where(np.abs(dr) < grid.exclusion, -np.inf, ratio)
        out[sl] = np.max(ratio, axis=1)

    return float(out[0]) if shape == () else out.reshape(shape)


def weighted_normal(model: ForwardModel, weights, field: FieldTag) -> PsdOperator:
    """u -> A'diag(weights)A u on the linear part; real-projected for real fields."""
    weights = np.asarray(weights, dtype=float)

    def apply(u):
        out = model.adjoint(weights * model.apply_linear(u))
        return out.real if field.is_real else out

    return PsdOperator(apply, model.cols, float if field.is_real else complex)


@dataclass
class InnerResult:
    x: np.ndarray
    iterations: int
    converged: bool
    costs: List[float] = field(default_factory=list)


def solve_normal(op: PsdOperator, rhs: np.ndarray, inner: InnerConfig,
                 x0: Optional[np.ndarray] = None) -> InnerResult:
    """op(u) = rhs by dense Cholesky for small N, else CG."""
    rhs = np.asarray(rhs, dtype=op.dtype)
    if op.dim <= inner.direct_threshold:
        matrix = op.to_matrix()
        try:
            u = scipy.linalg.solve(matrix, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as e:
            logger.error(f"Direct normal solve failed: {str(e)}")
            raise NumericalError(f"singular normal matrix ({e})") from e
        return InnerResult(u, 0, True)
    res = cg_solve(op, rhs, iters=inner.cg_iters, tol=inner.cg_tol, x0=x0)
    if not res.converged:
        logger.debug(f"CG stopped after {res.iterations} iterations, residual {res.residual_norm:.3e}")
    if res.iterations == 0 and np.any(rhs) and not res.converged:
        raise NumericalError("CG made no progress; normal operator is singular along the right-hand side")
    return InnerResult(res.x, res.iterations, res.converged)


@dataclass
class QuadraticModel:
    """q(x) = Re<g, x - x0> + 1/2 <x - x0, H (x - x0)> with H Hermitian PSD."""

    hessian: PsdOperator
    anchor: np.ndarray
    anchor_grad: np.ndarray
    field: FieldTag

    def _vec(self, x):
        x = np.asarray(x, dtype=complex)
        return x.real if self.field.is_real else x

    def gradient(self, x) -> np.ndarray:
        return self._vec(self.anchor_grad) + self.hessian(self._vec(x) - self._vec(self.anchor))

    def value(self, x) -> float:
        d = self._vec(x) - self._vec(self.anchor)
        return float(np.real(np.vdot(self._vec(self.anchor_grad), d)) + 0.5 * np.real(np.vdot(d, self.hessian(d))))

    def minimize(self, inner: InnerConfig) -> InnerResult:
        step = solve_normal(self.hessian, self._vec(self.anchor_grad), inner)
        step.x = np.asarray(self.anchor, dtype=complex) - step.x
        return step


def minimize_prox_l1(qm: QuadraticModel, reg: L1Penalty, inner: InnerConfig) -> InnerResult:
    """Accelerated proximal gradient on q + beta*||x||_1 over the field.

    Function-value restart, plus step halving when a plain proximal step fails to
    descend, keeps the accepted objective values non-increasing.
    """
    lipschitz, _ = power_method(qm.hessian, iters=inner.power_iters, seed=0)
    lipschitz *= inner.lipschitz_safety
    if lipschitz <= 0:
        raise NumericalError("prox inner solver: zero curvature")
    step = 1.0 / lipschitz

    def objective(z):
        return qm.value(z) + reg.penalty(z)

    def prox_step(z, mu):
        return project_to_field(np.asarray(reg.prox(z - mu * qm.gradient(z), mu), dtype=complex), qm.field)

    x = project_to_field(np.asarray(qm.anchor, dtype=complex).copy(), qm.field)
    z, t = x.copy(), 1.0
    f_prev = objective(x)
    costs = [f_prev]
    converged = False
    it = 0
    for it in range(1, inner.max_iters + 1):
        x_new = prox_step(z, step)
        f_new = objective(x_new)
        if f_new > f_prev:
            if t > 1.0:
                z, t = x.copy(), 1.0
            else:
                step /= 2
            continue
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = x_new + ((t - 1) / t_new) * (x_new - x)
        change = np.linalg.norm(x_new - x)
        x, t, f_prev = x_new, t_new, f_new
        costs.append(f_new)
        if change <= inner.tol * max(np.linalg.norm(x), 1.0):
            converged = True
            break
    if not converged:
        logger.debug(f"prox inner loop hit {inner.max_iters} iterations")
    return InnerResult(x, it, converged, costs)


def _projected_descent(objective, x, p, step, f_now, field: FieldTag, trials: int = 40):
    """First halving of ``step`` whose projected point does not raise the objective."""
    for _ in range(trials):
        trial = project_to_field(x + step * p, field)
        f_trial = objective(trial)
        if f_trial <= f_now:
            return trial, f_trial
        step /= 2
    return None, f_now


def minimize_huber(qm: QuadraticModel, reg: HuberTV, inner: InnerConfig) -> InnerResult:
    """Nonlinear CG (Polak-Ribiere+) on q + beta*sum h(Tx); steps from Huber's quadratic majorizer.

    For a nonnegative field each step is projected and halved until the objective does
    not rise; when the CG direction cannot descend it falls back to projected steepest
    descent, and a failed fallback means the iterate is stationary over the orthant.
    """
    nonneg = qm.field is FieldTag.REAL_NONNEGATIVE
    x = project_to_field(np.asarray(qm.anchor, dtype=complex).copy(), qm.field)

    def full_gradient(z):
        g = qm.gradient(z) + qm._vec(reg.gradient(z))
        return g

    def objective(z):
        return qm.value(z) + reg.penalty(z)

    def stationarity(z, g):
        if nonneg:
            return np.linalg.norm(z.real - np.maximum(z.real - g, 0.0))
        return np.linalg.norm(g)

    def majorizer_step(z, p, slope):
        curvature = float(np.real(np.vdot(p, qm.hessian(p))))
        if reg.beta != 0:
            tp = reg.diff_op.forward(p)
            curvature += reg.beta * float(np.sum(np.atleast_1d(huber_weight(reg.diff_op.forward(z), reg.alpha))
                                                 * np.abs(tp) ** 2))
        if curvature <= 0:
            raise NumericalError("Huber inner solver: zero curvature along search direction")
        return -slope / curvature

    g = full_gradient(x)
    p = -g
    f_now = objective(x)
    costs = [f_now]
    converged = False
    it = 0
    for it in range(1, inner.max_iters + 1):
        if stationarity(x, g) <= inner.tol * max(np.linalg.norm(qm._vec(qm.anchor_grad)), 1.0):
            converged = True
            break
        slope = float(np.real(np.vdot(g, p)))
        if slope >= 0:
            p, slope = -g, -float(np.real(np.vdot(g, g)))
        step = majorizer_step(x, p, slope)
        if nonneg:
            x_new, f_new = _projected_descent(objective, x, p, step, f_now, qm.field)
            if x_new is None or np.array_equal(x_new, x):
                p, slope = -g, -float(np.real(np.vdot(g, g)))
                x_new, f_new = _projected_descent(objective, x, p, majorizer_step(x, p, slope), f_now, qm.field)
            if x_new is None or np.array_equal(x_new, x):
                converged = True
                break
        else:
            x_new = x + step * p
            if qm.field.is_real:
                x_new = x_new.real.astype(complex)
            f_new = objective(x_new)
        x, f_now = x_new, f_new
        g_new = full_gradient(x)
        pr = float(np.real(np.vdot(g_new, g_new - g)) / np.real(np.vdot(g, g)))
        p = -g_new + max(pr, 0.0) * p
        g = g_new
        costs.append(f_now)
    return InnerResult(x, it, converged, costs)


@dataclass
class MajorizerContext:
    """Quadratic majorizer of the Poisson cost touching it at ``anchor``."""

    anchor: np.ndarray
    s: np.ndarray
    grad: np.ndarray
    weights: np.ndarray
    cost: float
    model: ForwardModel
    field: FieldTag

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise NumericalError("majorizer curvature must be positive")

    def quadratic_model(self) -> QuadraticModel:
        return QuadraticModel(weighted_normal(self.model, self.weights, self.field), self.anchor, self.grad, self.field)


def curvature_weights(obj: PoissonObjective, s, kind: CurvatureKind,
                      grid: CurvatureGrid = CurvatureGrid()) -> np.ndarray:
    kind = CurvatureKind(kind)
    if kind is CurvatureKind.MAX:
        return curvature_max(obj.y, obj.b)
    if kind is CurvatureKind.IMPROVED:
        return np.asarray(curvature_improved(s, obj.y, obj.b))
    return np.asarray(curvature_optimal_numeric(s, obj.y, obj.b, grid))


def build_majorizer(obj: PoissonObjective, x, kind: CurvatureKind,
                    grid: CurvatureGrid = CurvatureGrid()) -> MajorizerContext:
    x = np.asarray(x, dtype=complex).ravel()
    s = obj.model.apply(x)
    grad = real_part_if(obj.model.adjoint(psi_dot(s, obj.y, obj.b)), obj.field)
    weights = curvature_weights(obj, s, kind, grid)
    return MajorizerContext(anchor=x, s=s, grad=grad, weights=np.asarray(weights, dtype=float),
                            cost=obj.cost(x), model=obj.model, field=obj.field)


def majorizer_value(ctx: MajorizerContext, x) -> float:
    """f(x_k) + Re{(x - x_k)'A'psi_dot(s)} + 1/2 (x - x_k)'A'WA(x - x_k)."""
    d = np.asarray(x, dtype=complex).ravel() - ctx.anchor
    ad = ctx.model.apply_linear(d)
    return float(ctx.cost + np.real(np.vdot(ctx.grad, d)) + 0.5 * np.sum(ctx.weights * np.abs(ad) ** 2))


def mm_update_unregularized(ctx: MajorizerContext, inner: InnerConfig = InnerConfig()) -> InnerResult:
    """x_k - (A'WA)^{-1} A'psi_dot(A x_k); over the nonnegative orthant, projected FISTA on the majorizer."""
    if ctx.field is FieldTag.REAL_NONNEGATIVE:
        return minimize_prox_l1(ctx.quadratic_model(), L1Penalty(0.0), inner)
    result = ctx.quadratic_model().minimize(inner)
    result.x = project_to_field(result.x, ctx.field)
    return result


def mm_update_prox_l1(ctx: MajorizerContext, reg: L1Penalty, inner: InnerConfig = InnerConfig()) -> InnerResult:
    return minimize_prox_l1(ctx.quadratic_model(), reg, inner)


def mm_update_huber(ctx: MajorizerContext, reg: HuberTV, inner: InnerConfig = InnerConfig()) -> InnerResult:
    return minimize_huber(ctx.quadratic_model(), reg, inner)


def _update(ctx, reg, inner) -> InnerResult:
    if reg is None:
        return mm_update_unregularized(ctx, inner)
    if isinstance(reg, L1Penalty):
        return mm_update_prox_l1(ctx, reg, inner)
    return mm_update_huber(ctx, reg, inner)


def run_mm(obj: PoissonObjective, reg: Optional[Regularizer], curvature: CurvatureKind, x0, n_outer: int,
           inner: InnerConfig = InnerConfig(), grid: CurvatureGrid = CurvatureGrid(), x_true=None,
           trace_objective=None, peak: Optional[float] = None) -> RunState:
    if n_outer < 0:
        raise ValueError(f"n_outer must be nonnegative, got {n_outer}")
    if not isinstance(obj, PoissonObjective):
        raise TypeError("run_mm majorizes the Poisson cost only")
    curvature = CurvatureKind(curvature)
    _require_positive_background(obj.b, "run_mm")

    x = project_to_field(np.asarray(x0, dtype=complex).copy(), obj.field)
    report = trace_objective or obj
    recorder = TraceRecorder(lambda z: total_cost(report, reg, z), x_true, peak)
    inner_iterations, unconverged = [], 0
    status = "completed"
    logger.info(f"MM start: {curvature.value} curvature, regularizer {getattr(reg, 'name', 'none')}, "
                f"{n_outer} outer iterations")

    for k in range(1, n_outer + 1):
        recorder.start()
        try:
            ctx = build_majorizer(obj, x, curvature, grid)
            result = _update(ctx, reg, inner)
            x = result.x
        except NumericalError as e:
            recorder.stop()
            status = f"failed: {e}"
            logger.error(f"MM stopped at outer iteration {k}: {str(e)}")
            break
        recorder.stop()
        inner_iterations.append(result.iterations)
        unconverged += int(not result.converged)
        recorder.record(k, x)

    if unconverged:
        logger.info(f"MM inner solver hit its iteration cap in {unconverged} of {len(inner_iterations)} steps")
    return RunState(x=x, trace=recorder.finish(status), algorithm=f"mm-{curvature.value}",
                    info={"inner_iterations": inner_iterations, "inner_unconverged": unconverged})
