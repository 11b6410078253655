"""ADMM for the Poisson cost with the splitting v = Ax.

The v-update separates per measurement: the phase follows Ax - eta and the
magnitude solves a quadratic (b = 0) or cubic (b > 0) stationarity condition.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.components.forward_models import FieldTag, ForwardModel, project_to_field
from src.components.init_eval import RunState, TraceRecorder
from src.components.mm import InnerConfig, QuadraticModel, minimize_huber, minimize_prox_l1, solve_normal, \
    weighted_normal
from src.components.numerics import cubic_real_roots_vec
from src.components.objectives import HuberTV, L1Penalty, PoissonObjective, Regularizer, real_part_if, total_cost
from src.utils import DimensionError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_RHO = 8.0
RHO_INTERVAL = 10


@dataclass
class AdmmState:
    x: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    rho: float = DEFAULT_RHO
    k: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.v.shape != self.eta.shape:
            raise DimensionError("ADMM dual variable", self.v.size, self.eta.size)

    @classmethod
    def initial(cls, model: ForwardModel, x0, rho: float = DEFAULT_RHO) -> "AdmmState":
        x = np.asarray(x0, dtype=complex).ravel().copy()
        v = model.apply(x)
        return cls(x=x, v=v, eta=np.zeros_like(v), rho=rho)


def update_v_phase(x, eta, model: ForwardModel) -> np.ndarray:
    """sign(Ax - eta) with sign(0) = 1."""
    z = model.apply(x) - np.asarray(eta, dtype=complex)
    mag = np.abs(z)
    return np.divide(z, mag, out=np.ones_like(z), where=mag > 0)


def update_v_magnitude_b0(t, y, rho: float):
    """Positive root of (2+rho)m^2 - rho*t*m - 2y = 0."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    out = (rho * t + np.sqrt(rho ** 2 * t ** 2 + 8 * y * (2 + rho))) / (2 * (2 + rho))
    return out.item() if out.ndim == 0 else out


def magnitude_lagrangian(m, t, y, b, rho: float):
    mean = m * m + b
    return mean - y * np.log(mean) + 0.5 * rho * (m - t) ** 2


def update_v_magnitude_bpos(t, y, b, rho: float):
    """Among nonnegative roots of (2+rho)m^3 - rho*t*m^2 + (2b-2y+rho*b)m - rho*b*t,
    the one with the smallest Lagrangian term."""
    t, y, b = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, y, b)))
    scalar = t.ndim == 0
    t, y, b = np.atleast_1d(t, y, b)
    if np.any(b <= 0):
        raise ValueError("update_v_magnitude_bpos needs b > 0")
    roots = cubic_real_roots_vec(np.full(t.shape, 2 + rho), -rho * t, 2 * b - 2 * y + rho * b, -rho * b * t)
    # roots at the origin can come back as -1e-17
    roots = np.where(roots > -1e-12, np.maximum(roots, 0.0), np.nan)
    if np.any(np.all(np.isnan(roots), axis=-1)):
        raise NumericalError("no nonnegative root for the ADMM magnitude cubic")
    with np.errstate(invalid="ignore"):
        values = magnitude_lagrangian(roots, t[..., None], y[..., None], b[..., None], rho)
    best = np.nanargmin(np.where(np.isnan(roots), np.inf, values), axis=-1)
    out = np.take_along_axis(roots, best[..., None], axis=-1)[..., 0]
    return out.item() if scalar else out


def update_v(x, eta, model: ForwardModel, y, rho: float) -> np.ndarray:
    phase = update_v_phase(x, eta, model)
    t = np.abs(model.apply(x) - eta)
    b = model.background
    magnitude = np.empty_like(t)
    zero = b == 0
    if np.any(zero):
        magnitude[zero] = update_v_magnitude_b0(t[zero], y[zero], rho)
    if np.any(~zero):
        magnitude[~zero] = update_v_magnitude_bpos(t[~zero], y[~zero], b[~zero], rho)
    return magnitude * phase


def update_x(model: ForwardModel, v, eta, reg: Optional[Regularizer] = None, rho: float = DEFAULT_RHO,
             field: FieldTag = FieldTag.COMPLEX, inner: InnerConfig = InnerConfig(),
             x_prev: Optional[np.ndarray] = None) -> np.ndarray:
    """argmin_x (rho/2)||Ax - v - eta||^2 + beta*R(x); the affine offset of A moves into the target."""
    field = FieldTag(field)
    target = np.asarray(v, dtype=complex) + np.asarray(eta, dtype=complex) - model.offset

    if reg is None:
        rhs = model.adjoint(target)
        rhs = rhs.real if field.is_real else rhs
        diag = model.normal_diagonal()
        if diag is not None:
            if np.any(diag == 0):
                raise NumericalError("A'A has zero diagonal entries")
            x = rhs / diag
        else:
            x0 = None if x_prev is None else (np.real(x_prev) if field.is_real else x_prev)
            x = solve_normal(weighted_normal(model, np.ones(model.rows), field), rhs, inner, x0=x0).x
        return project_to_field(np.asarray(x, dtype=complex), field)

    anchor = np.zeros(model.cols, dtype=complex) if x_prev is None else np.asarray(x_prev, dtype=complex)
    anchor_grad = rho * real_part_if(model.adjoint(model.apply_linear(anchor) - target), field)
    qm = QuadraticModel(weighted_normal(model, np.full(model.rows, rho), field), anchor, anchor_grad, field)
    if isinstance(reg, L1Penalty):
        result = minimize_prox_l1(qm, reg, inner)
    elif isinstance(reg, HuberTV):
        result = minimize_huber(qm, reg, inner)
    else:
        raise TypeError(f"Unsupported regularizer {type(reg).__name__}")
    return project_to_field(result.x, field)


def update_dual(eta, v, x, model: ForwardModel) -> np.ndarray:
    """eta + (v - Ax); the residual is not scaled by rho."""
    return np.asarray(eta, dtype=complex) + (np.asarray(v, dtype=complex) - model.apply(x))


def update_rho(rho: float, primal_res_norm: float, dual_res_norm: float, k: int,
               interval: int = RHO_INTERVAL) -> float:
    if k <= 0 or k % interval != 0:
        return rho
    if primal_res_norm > 10 * dual_res_norm:
        return 2 * rho
    if dual_res_norm > 100 * rho * primal_res_norm:
        return rho / 2
    return rho


@dataclass
class AdmmHistory:
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    rhos: list = field(default_factory=list)


def run_admm(obj: PoissonObjective, reg: Optional[Regularizer], x0, rho0: float = DEFAULT_RHO,
             n_iters: int = 100, inner: InnerConfig = InnerConfig(), x_true=None,
             trace_objective=None, peak: Optional[float] = None) -> RunState:
    """v, then x, then eta each iteration, starting from v0 = Ax0 and eta0 = 0."""
    if n_iters < 0:
        raise ValueError(f"n_iters must be nonnegative, got {n_iters}")
    if not isinstance(obj, PoissonObjective):
        raise TypeError("run_admm splits the Poisson cost only")
    model = obj.model
    state = AdmmState.initial(model, project_to_field(np.asarray(x0, dtype=complex), obj.field), rho0)
    report = trace_objective or obj
    recorder = TraceRecorder(lambda z: total_cost(report, reg, z), x_true, peak)
    history = AdmmHistory()
    status = "completed"
    logger.info(f"ADMM start: rho0={rho0}, regularizer {getattr(reg, 'name', 'none')}, {n_iters} iterations")

    for k in range(1, n_iters + 1):
        recorder.start()
        try:
            v_prev = state.v
            state.v = update_v(state.x, state.eta, model, obj.y, state.rho)
            state.x = update_x(model, state.v, state.eta, reg, state.rho, obj.field, inner, x_prev=state.x)
            state.eta = update_dual(state.eta, state.v, state.x, model)
            primal = float(np.linalg.norm(model.apply(state.x) - state.v))
            dual = float(state.rho * np.linalg.norm(model.adjoint(state.v - v_prev)))
            new_rho = update_rho(state.rho, primal, dual, k)
            if new_rho != state.rho:
                logger.debug(f"iter {k}: rho {state.rho:.4g} -> {new_rho:.4g}")
            state.rho = new_rho
            state.k = k
        except NumericalError as e:
            recorder.stop()
            status = f"failed: {e}"
            logger.error(f"ADMM stopped at iteration {k}: {str(e)}")
            break
        recorder.stop()
        history.primal_residuals.append(primal)
        history.dual_residuals.append(dual)
        history.rhos.append(state.rho)
        recorder.record(k, state.x)

    return RunState(x=state.x, trace=recorder.finish(status), algorithm="admm",
                    info={"primal_residuals": history.primal_residuals,
                          "dual_residuals": history.dual_residuals,
                          "rho": history.rhos, "final_rho": state.rho})
