"""Marginal likelihood terms, ML costs and the Huber-smoothed TV regularizer.

Gradients are Wirtinger ascent directions: descent updates are always x - mu*grad,
and the real inner product Re<grad, d> is the directional derivative along d.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from src.components.forward_models import FieldTag, ForwardModel, MeasurementSet
from src.components.numerics import soft_threshold
from src.utils import DimensionError, DomainError

logger = logging.getLogger(__name__)


def _as_arrays(v, y, b):
    return np.asarray(v, dtype=complex), np.asarray(y, dtype=float), np.asarray(b, dtype=float)


def _scalar_or_array(out):
    return out.item() if np.ndim(out) == 0 else out


def psi(v, y, b):
    """(|v|^2 + b) - y log(|v|^2 + b), with 0 log 0 = 0."""
    v, y, b = _as_arrays(v, y, b)
    mean = np.abs(v) ** 2 + b
    if np.any((mean == 0) & (y > 0)):
        raise DomainError("psi: zero Poisson mean with a positive count (b = 0, v = 0, y > 0)")
    log_term = y * np.log(np.where(y > 0, mean, 1.0))
    return _scalar_or_array(mean - log_term)


def _ratio(y, mean, name):
    if np.any((mean == 0) & (y > 0)):
        raise DomainError(f"{name}: |v|^2 + b = 0 with y > 0")
    return np.divide(y, mean, out=np.zeros(np.broadcast(y, mean).shape), where=mean > 0)


def psi_dot(v, y, b):
    """Ascent direction 2v(1 - y/(|v|^2 + b))."""
    v, y, b = _as_arrays(v, y, b)
    mean = np.abs(v) ** 2 + b
    return _scalar_or_array(2 * v * (1 - _ratio(y, mean, "psi_dot")))


def psi_ddot(v, y, b):
    """Second derivative along |v|: 2 + 2y(|v|^2 - b)/(|v|^2 + b)^2."""
    v, y, b = _as_arrays(v, y, b)
    r2 = np.abs(v) ** 2
    mean = r2 + b
    if np.any(mean == 0):
        raise DomainError("psi_ddot: undefined at v = 0 with b = 0")
    return _scalar_or_array(2 + 2 * y * (r2 - b) / mean ** 2)


def fisher_marginal_poisson(v, b):
    """4|v|^2/(|v|^2 + b); equals 4 in the b -> 0 limit for v != 0."""
    r2 = np.abs(np.asarray(v, dtype=complex)) ** 2
    mean = r2 + np.asarray(b, dtype=float)
    out = np.divide(4 * r2, mean, out=np.zeros(np.broadcast(r2, mean).shape), where=mean > 0)
    return _scalar_or_array(out)


def fisher_marginal_gaussian(v, b):
    r2 = np.abs(np.asarray(v, dtype=complex)) ** 2
    return _scalar_or_array(16 * r2 * (r2 + np.asarray(b, dtype=float)))


def real_part_if(grad: np.ndarray, field: FieldTag) -> np.ndarray:
    # real-valued signals use only the real part of the Wirtinger direction
    return np.real(grad).astype(complex) if field.is_real else grad


class _Objective:
    name = "objective"

    def __init__(self, model: ForwardModel, measurements: Union[MeasurementSet, np.ndarray],
                 field: FieldTag = FieldTag.COMPLEX):
        y = measurements.y if isinstance(measurements, MeasurementSet) else measurements
        y = np.asarray(y, dtype=float).ravel()
        if y.size != model.rows:
            raise DimensionError(f"{self.name} measurements", model.rows, y.size)
        self.model = model
        self.y = y
        self.field = FieldTag(field)

    @property
    def b(self) -> np.ndarray:
        return self.model.background

    def marginal_cost(self, v):
        raise NotImplementedError

    def marginal_gradient(self, v):
        raise NotImplementedError

    def cost(self, x) -> float:
        return float(np.sum(self.marginal_cost(self.model.apply(x))))

    def gradient(self, x, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """A' applied to the marginal ascent directions, restricted to ``mask`` if given."""
        marg = self.marginal_gradient(self.model.apply(x))
        if mask is not None:
            marg = np.where(mask, marg, 0)
        return real_part_if(self.model.adjoint(marg), self.field)


class PoissonObjective(_Objective):
    """Marginal negative log-likelihood sum f(x) = sum_i psi([Ax]_i; y_i, b_i)."""

    name = "poisson"

    def marginal_cost(self, v):
        return psi(v, self.y, self.b)

    def marginal_gradient(self, v):
        return psi_dot(v, self.y, self.b)

    def hessian_marginal(self, v):
        return psi_ddot(v, self.y, self.b)

    def fisher_marginal(self, v):
        return fisher_marginal_poisson(v, self.b)


class GaussianObjective(_Objective):
    """g(x) = sum_i |y_i - b_i - |a_i'x|^2|^2."""

    name = "gaussian"

    def marginal_cost(self, v):
        return (self.y - self.b - np.abs(v) ** 2) ** 2

    def marginal_gradient(self, v):
        return 4 * (np.abs(v) ** 2 - self.y + self.b) * v


def cost(obj: _Objective, x) -> float:
    return obj.cost(x)


def gradient(obj: _Objective, x) -> np.ndarray:
    return obj.gradient(x)


def huber(t, alpha: float):
    a = np.abs(np.asarray(t))
    return _scalar_or_array(np.where(a < alpha, 0.5 * a ** 2, alpha * a - 0.5 * alpha ** 2))


def huber_dot(t, alpha: float):
    t = np.asarray(t, dtype=complex)
    a = np.abs(t)
    clipped = np.divide(alpha * t, a, out=np.zeros_like(t), where=a > 0)
    return _scalar_or_array(np.where(a < alpha, t, clipped))


def huber_weight(t, alpha: float):
    """min(alpha/|t|, 1), taking the limit 1 at t = 0."""
    a = np.abs(np.asarray(t))
    ratio = np.divide(alpha, a, out=np.ones(a.shape), where=a > 0)
    return _scalar_or_array(np.minimum(ratio, 1.0))


@dataclass
class FiniteDifference:
    """Anisotropic first differences: a chain for vectors, stacked H/V for images."""

    size: int
    dims: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.dims is not None:
            self.dims = tuple(int(d) for d in self.dims)
            if self.dims[0] * self.dims[1] != self.size:
                raise DimensionError("difference operator dims", self.size, self.dims[0] * self.dims[1])

    @property
    def rows(self) -> int:
        if self.dims is None:
            return self.size - 1
        h, w = self.dims
        return h * (w - 1) + (h - 1) * w

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.dims is None:
            return np.diff(x)
        img = x.reshape(self.dims)
        return np.concatenate([np.diff(img, axis=1).ravel(), np.diff(img, axis=0).ravel()])

    def adjoint(self, z) -> np.ndarray:
        z = np.asarray(z)
        if self.dims is None:
            return -np.diff(z, prepend=0, append=0)
        h, w = self.dims
        horiz = z[: h * (w - 1)].reshape(h, w - 1)
        vert = z[h * (w - 1):].reshape(h - 1, w)
        out = -np.diff(horiz, axis=1, prepend=0, append=0)
        out = out - np.diff(vert, axis=0, prepend=0, append=0)
        return out.ravel()


@dataclass
class HuberTV:
    """beta * sum h([Tx]_k; alpha) with T the anisotropic finite differences."""

    beta: float
    alpha: float
    diff_op: FiniteDifference
    name: str = field(default="huber_tv", init=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def for_signal(cls, size: int, dims=None, beta: float = 32.0, alpha: float = 0.1) -> "HuberTV":
        return cls(beta=beta, alpha=alpha, diff_op=FiniteDifference(size, dims))

    def value(self, x) -> float:
        """R(x) without the strength beta."""
        return float(np.sum(huber(self.diff_op.forward(x), self.alpha)))

    def penalty(self, x) -> float:
        return self.beta * self.value(x)

    def gradient(self, x) -> np.ndarray:
        return self.beta * self.diff_op.adjoint(huber_dot(self.diff_op.forward(x), self.alpha))

    def weights(self, x) -> np.ndarray:
        return np.atleast_1d(huber_weight(self.diff_op.forward(x), self.alpha))


def reg_cost(x, reg: HuberTV) -> float:
    return reg.value(x)


def reg_gradient(x, reg: HuberTV) -> np.ndarray:
    return reg.gradient(x)


@dataclass
class L1Penalty:
    """beta * ||x||_1 (T = I), handled through its soft-thresholding prox."""

    beta: float
    name: str = field(default="l1", init=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    def penalty(self, x) -> float:
        return self.beta * float(np.sum(np.abs(x)))

    def prox(self, z: np.ndarray, step: float) -> np.ndarray:
        return soft_threshold(z, self.beta * step)


Regularizer = Union[HuberTV, L1Penalty]


def total_cost(obj: _Objective, reg: Optional[Regularizer], x) -> float:
    value = obj.cost(x)
    if reg is not None:
        value += reg.penalty(x)
    return value


def total_gradient(obj: _Objective, reg: Optional[HuberTV], x, mask=None) -> np.ndarray:
    grad = obj.gradient(x, mask)
    if reg is not None:
        if not isinstance(reg, HuberTV):
            raise TypeError(f"{reg.name} has no gradient; use a prox-based solver")
        grad = grad + real_part_if(reg.gradient(x), obj.field)
    return grad
