"""Wirtinger flow with interchangeable step-size rules and optional gradient truncation."""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from src.components.forward_models import project_to_field
from src.components.init_eval import RunState, TraceRecorder
from src.components.numerics import cubic_real_roots
from src.components.objectives import (GaussianObjective, HuberTV, _Objective, fisher_marginal_gaussian,
                                       fisher_marginal_poisson, total_cost, total_gradient)
from src.utils import NumericalError

logger = logging.getLogger(__name__)

SAFEGUARD_FACTOR = 10.0


class StepKind(str, Enum):
    FISHER_POISSON = "fisher_poisson"
    FISHER_GAUSSIAN = "fisher_gaussian"
    BACKTRACKING = "backtracking"
    EXACT_GAUSSIAN = "exact_gaussian"


@dataclass
class StepRule:
    kind: StepKind = StepKind.FISHER_POISSON
    shrink: float = 0.5
    sufficient_decrease: float = 0.01
    initial_step: float = 1.0
    max_trials: int = 30

    def __post_init__(self):
        self.kind = StepKind(self.kind)
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError(f"sufficient_decrease must lie in (0, 1), got {self.sufficient_decrease}")
        if self.initial_step <= 0 or self.max_trials < 1:
            raise ValueError("initial_step must be positive and max_trials at least 1")


@dataclass
class TruncationRule:
    enabled: bool = False
    a_h: float = 10.0

    def __post_init__(self):
        if self.a_h < 0:
            raise ValueError(f"a_h must be nonnegative, got {self.a_h}")


def _sq_norm(z: np.ndarray) -> float:
    return float(np.real(np.vdot(z, z)))


def _fisher_denominator(obj: _Objective, x, direction, marginal) -> float:
    d = obj.model.apply_linear(direction)
    weights = marginal(obj.model.apply(x), obj.b)
    return float(np.sum(weights * np.abs(d) ** 2))


def step_fisher(obj: _Objective, x, grad, marginal=fisher_marginal_poisson) -> float:
    """||grad||^2 / (d' D1 d) with d = A grad and D1 the marginal Fisher information at Ax."""
    numerator = _sq_norm(grad)
    if numerator == 0:
        raise NumericalError("step_fisher: zero gradient")
    denominator = _fisher_denominator(obj, x, grad, marginal)
    if denominator <= 0:
        raise NumericalError("step_fisher: zero Fisher curvature (degenerate iterate, A x = 0)")
    return numerator / denominator


def step_fisher_reg(obj: _Objective, reg: HuberTV, x, grad_reg,
                    marginal=fisher_marginal_poisson) -> float:
    """||g||^2 / (g'(A'D1A + beta T'D2T)g) with D2 the Huber curvature ratio min(alpha/|Tx|, 1)."""
    numerator = _sq_norm(grad_reg)
    if numerator == 0:
        raise NumericalError("step_fisher_reg: zero gradient")
    denominator = _fisher_denominator(obj, x, grad_reg, marginal)
    if reg.beta != 0:
        t_grad = reg.diff_op.forward(grad_reg)
        denominator += reg.beta * float(np.sum(reg.weights(x) * np.abs(t_grad) ** 2))
    if denominator <= 0:
        raise NumericalError("step_fisher_reg: zero curvature")
    return numerator / denominator


def step_backtracking(cost_fn: Callable[[np.ndarray], float], x, grad,
                      rule: StepRule = StepRule(kind=StepKind.BACKTRACKING),
                      current_cost: Optional[float] = None) -> Tuple[float, bool]:
    """Armijo search mu = mu0 * shrink^j; returns (mu, accepted)."""
    grad_sq = _sq_norm(grad)
    if grad_sq == 0:
        raise NumericalError("step_backtracking: zero gradient")
    base = cost_fn(x) if current_cost is None else current_cost
    mu = rule.initial_step
    for _ in range(rule.max_trials):
        try:
            trial = cost_fn(x - mu * grad)
        except (ArithmeticError, ValueError):
            trial = np.inf
        if trial <= base - rule.sufficient_decrease * mu * grad_sq:
            return mu, True
        mu *= rule.shrink
    mu /= rule.shrink
    logger.warning(f"Backtracking exhausted {rule.max_trials} trials; using mu={mu:.3e}")
    return mu, False


def _line_quartic(obj: GaussianObjective, x, grad) -> np.ndarray:
    """Coefficients (c0..c4) of mu -> g(x - mu*grad)."""
    u = obj.model.apply(x)
    w = obj.model.apply_linear(grad)
    p0 = np.abs(u) ** 2
    p1 = -2 * np.real(np.conj(u) * w)
    p2 = np.abs(w) ** 2
    e = obj.y - obj.b - p0
    return np.array([
        np.sum(e * e),
        -2 * np.sum(e * p1),
        np.sum(p1 * p1 - 2 * e * p2),
        2 * np.sum(p1 * p2),
        np.sum(p2 * p2),
    ])


def step_exact_gaussian(obj: GaussianObjective, x, grad) -> float:
    """Global minimizer over mu >= 0 of the quartic g(x - mu*grad); ties go to the smallest mu."""
    if _sq_norm(grad) == 0:
        raise NumericalError("step_exact_gaussian: zero gradient")
    c = _line_quartic(obj, x, grad)
    if not np.any(c[1:]):
        raise NumericalError("step_exact_gaussian: line restriction is constant")
    candidates = [0.0]
    candidates += [r for r in cubic_real_roots(4 * c[4], 3 * c[3], 2 * c[2], c[1]) if r > 0]
    candidates = np.array(sorted(candidates))
    values = np.polynomial.polynomial.polyval(candidates, c)
    best = values.min()
    scale = max(abs(best), abs(c[0]), 1.0)
    return float(candidates[np.flatnonzero(values <= best + 1e-14 * scale)[0]])


def truncation_mask(obj: _Objective, x, a_h: float) -> np.ndarray:
    """Keep i when |y_i - |a_i'x|^2| <= a_h * (||y - |Ax|^2||_1 / M) * |a_i'x|^2 / ||x||."""
    x = np.asarray(x, dtype=complex)
    x_norm = np.linalg.norm(x)
    if x_norm == 0:
        raise NumericalError("truncation_mask: x = 0")
    if np.isinf(a_h):
        return np.ones(obj.model.rows, dtype=bool)
    intensity = np.abs(obj.model.apply(x)) ** 2
    residual = np.abs(obj.y - intensity)
    threshold = a_h * np.mean(residual) * intensity / x_norm
    return residual <= threshold


def _step_size(rule: StepRule, obj, reg, x, grad, cost_now) -> float:
    if rule.kind in (StepKind.FISHER_POISSON, StepKind.FISHER_GAUSSIAN):
        marginal = fisher_marginal_poisson if rule.kind is StepKind.FISHER_POISSON else fisher_marginal_gaussian
        if reg is not None:
            return step_fisher_reg(obj, reg, x, grad, marginal)
        return step_fisher(obj, x, grad, marginal)
    if rule.kind is StepKind.BACKTRACKING:
        mu, _ = step_backtracking(lambda z: total_cost(obj, reg, z), x, grad, rule, cost_now)
        return mu
    if not isinstance(obj, GaussianObjective) or reg is not None:
        raise NumericalError("exact_gaussian step needs an unregularized Gaussian objective")
    return step_exact_gaussian(obj, x, grad)


def run_wf(obj: _Objective, reg: Optional[HuberTV], rule: StepRule, trunc: TruncationRule, x0,
           n_iters: int, x_true=None, trace_objective: Optional[_Objective] = None,
           peak: Optional[float] = None) -> RunState:
    """x_{k+1} = x_k - mu_k * grad; the trace holds one row per completed iteration.

    A zero truncated gradient (e.g. every measurement truncated) leaves x_k as a fixed point:
    its row is repeated for the remaining iterations and the status reads ``stationary``.
    """
    if n_iters < 0:
        raise ValueError(f"n_iters must be nonnegative, got {n_iters}")
    field = obj.field
    x = project_to_field(np.asarray(x0, dtype=complex).copy(), field)
    report = trace_objective or obj
    recorder = TraceRecorder(lambda z: total_cost(report, reg, z), x_true, peak)
    safeguarded = 0
    kept = []
    status = "completed"
    logger.info(f"WF start: {obj.name} objective, {rule.kind.value} step, {n_iters} iterations")

    for k in range(1, n_iters + 1):
        recorder.start()
        try:
            cost_now = total_cost(obj, reg, x)
            mask = truncation_mask(obj, x, trunc.a_h) if trunc.enabled else None
            if mask is not None:
                kept.append(float(np.mean(mask)))
            grad = total_gradient(obj, reg, x, mask)
            if mask is not None and _sq_norm(grad) == 0:
                recorder.stop()
                reason = "zero truncated gradient" if mask.any() else "no measurement passes truncation"
                status = f"stationary: {reason}"
                logger.warning(f"WF reached a fixed point at iteration {k} ({reason})")
                # later iterations would repeat x_k exactly
                for j in range(k, n_iters + 1):
                    recorder.record(j, x)
                break
            mu = _step_size(rule, obj, reg, x, grad, cost_now)
            x_new = project_to_field(x - mu * grad, field)
            if rule.kind in (StepKind.FISHER_POISSON, StepKind.FISHER_GAUSSIAN):
                cost_new = total_cost(obj, reg, x_new)
                if cost_new - cost_now > SAFEGUARD_FACTOR * abs(cost_now):
                    mu /= 2
                    x_new = project_to_field(x - mu * grad, field)
                    safeguarded += 1
                    logger.warning(f"iter {k}: Fisher step overshot (cost {cost_new:.4g}); halved to {mu:.3e}")
            x = x_new
        except NumericalError as e:
            recorder.stop()
            status = f"failed: {e}"
            logger.error(f"WF stopped at iteration {k}: {str(e)}")
            break
        recorder.stop()
        recorder.record(k, x)

    trace = recorder.finish(status)
    info = {"safeguard_halvings": safeguarded}
    if kept:
        info["kept_fraction"] = float(np.mean(kept))
        logger.info(f"Truncation kept {100 * info['kept_fraction']:.1f}% of measurements on average")
    return RunState(x=x, trace=trace, algorithm=f"wf-{rule.kind.value}", info=info)
