"""Shared numerical kernels: power method, CG, real polynomial roots, soft-thresholding,
finite differences and an L-BFGS minimizer."""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import line_search

from src.utils import DimensionError

logger = logging.getLogger(__name__)


@dataclass
class PsdOperator:
    """Matrix-free Hermitian positive-semidefinite operator on N-vectors."""

    apply: Callable[[np.ndarray], np.ndarray]
    dim: int
    dtype: type = complex

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=self.dtype).ravel()
        if u.size != self.dim:
            raise DimensionError("operator input", self.dim, u.size)
        return np.asarray(self.apply(u), dtype=self.dtype)

    def to_matrix(self) -> np.ndarray:
        eye = np.eye(self.dim, dtype=self.dtype)
        return np.column_stack([self(col) for col in eye])


def power_method(op: PsdOperator, iters: int = 300, seed: int = 0,
                 x0: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Leading eigenpair by repeated application; returns (Rayleigh quotient, unit vector)."""
    rng = np.random.default_rng(seed)
    if x0 is None:
        x = rng.standard_normal(op.dim)
        if op.dtype is complex:
            x = x + 1j * rng.standard_normal(op.dim)
    else:
        x = np.asarray(x0, dtype=op.dtype).copy()
    x = x / np.linalg.norm(x)

    eig = float(np.real(np.vdot(x, op(x))))
    for _ in range(iters):
        y = op(x)
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            # x lies in the null space
            return 0.0, x
        x = y / y_norm
        eig = float(np.real(np.vdot(x, op(x))))
    return eig, x


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    residual_history: List[float] = field(default_factory=list)


def cg_solve(op: PsdOperator, rhs: np.ndarray, iters: int = 30, tol: float = 1e-9,
             x0: Optional[np.ndarray] = None) -> CgResult:
    """Conjugate gradient for op(x) = rhs; stops when ||r|| <= tol * ||rhs||."""
    rhs = np.asarray(rhs, dtype=op.dtype).ravel()
    x = np.zeros_like(rhs) if x0 is None else np.asarray(x0, dtype=op.dtype).copy()
    r = rhs - op(x) if x0 is not None else rhs.copy()
    p = r.copy()
    rr = float(np.real(np.vdot(r, r)))
    target = tol * np.linalg.norm(rhs)
    history = [np.sqrt(rr)]

    k = 0
    while k < iters and np.sqrt(rr) > target:
        hp = op(p)
        curvature = float(np.real(np.vdot(p, hp)))
        if curvature <= 0:
            logger.warning(f"CG hit nonpositive curvature {curvature:.3e} at iteration {k}")
            break
        step = rr / curvature
        x = x + step * p
        r = r - step * hp
        rr_new = float(np.real(np.vdot(r, r)))
        p = r + (rr_new / rr) * p
        rr = rr_new
        k += 1
        history.append(np.sqrt(rr))

    converged = np.sqrt(rr) <= target
    return CgResult(x=x, iterations=k, residual_norm=float(np.sqrt(rr)),
                    converged=bool(converged), residual_history=history)


def quadratic_real_roots(c2: float, c1: float, c0: float) -> List[float]:
    if c2 == 0:
        if c1 == 0:
            return []
        return [-c0 / c1]
    disc = c1 * c1 - 4 * c2 * c0
    if disc < 0:
        return []
    sq = np.sqrt(disc)
    # avoid cancellation between -c1 and sq
    q = -0.5 * (c1 + np.copysign(sq, c1)) if c1 != 0 else -0.5 * sq
    if q == 0:
        return [0.0, 0.0]
    return sorted([q / c2, c0 / q])


def _cubic_eval(coeffs, m):
    c3, c2, c1, c0 = coeffs
    return ((c3 * m + c2) * m + c1) * m + c0


def _newton_polish(coeffs, m):
    c3, c2, c1, _ = coeffs
    slope = (3 * c3 * m + 2 * c2) * m + c1
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(slope != 0, _cubic_eval(coeffs, m) / np.where(slope != 0, slope, 1), 0.0)
    polished = m - step
    better = np.abs(_cubic_eval(coeffs, polished)) <= np.abs(_cubic_eval(coeffs, m))
    return np.where(better & np.isfinite(polished), polished, m)


def cubic_real_roots_vec(c3, c2, c1, c0) -> np.ndarray:
    """Real roots of c3 m^3 + c2 m^2 + c1 m + c0 for arrays of coefficients (c3 != 0).

    Returns an (..., 3) array; entries are NaN where the cubic has a complex pair.
    Trigonometric form for three real roots, hyperbolic form otherwise, then one
    Newton step per root.
    """
    c3, c2, c1, c0 = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (c3, c2, c1, c0)))
    a, b, c = c2 / c3, c1 / c3, c0 / c3
    p = b - a * a / 3
    q = 2 * a ** 3 / 27 - a * b / 3 + c
    shift = -a / 3
    roots = np.full(a.shape + (3,), np.nan)

    with np.errstate(invalid="ignore", divide="ignore"):
        three = (4 * p ** 3 + 27 * q ** 2 <= 0) & (p < 0)
        if np.any(three):
            pt, qt = p[three], q[three]
            amp = 2 * np.sqrt(-pt / 3)
            arg = np.clip(3 * qt / (2 * pt) * np.sqrt(-3 / pt), -1.0, 1.0)
            theta = np.arccos(arg) / 3
            for k in range(3):
                roots[three, k] = amp * np.cos(theta - 2 * np.pi * k / 3) + shift[three]

        one = ~three
        neg = one & (p < 0)
        if np.any(neg):
            pn, qn = p[neg], q[neg]
            arg = -3 * np.abs(qn) / (2 * pn) * np.sqrt(-3 / pn)
            roots[neg, 0] = (-2 * np.sign(qn) * np.sqrt(-pn / 3)
                             * np.cosh(np.arccosh(np.maximum(arg, 1.0)) / 3) + shift[neg])
        pos = one & (p > 0)
        if np.any(pos):
            pp, qp = p[pos], q[pos]
            arg = 3 * qp / (2 * pp) * np.sqrt(3 / pp)
            roots[pos, 0] = -2 * np.sqrt(pp / 3) * np.sinh(np.arcsinh(arg) / 3) + shift[pos]
        flat = one & (p == 0)
        if np.any(flat):
            root = np.cbrt(-q[flat]) + shift[flat]
            triple = q[flat] == 0
            roots[flat, 0] = root
            roots[flat, 1] = np.where(triple, root, np.nan)
            roots[flat, 2] = np.where(triple, root, np.nan)

    coeffs = tuple(np.expand_dims(cf, -1) for cf in (c3, c2, c1, c0))
    finite = np.isfinite(roots)
    roots[finite] = _newton_polish(tuple(np.broadcast_to(cf, roots.shape)[finite] for cf in coeffs),
                                   roots[finite])
    return roots


def cubic_real_roots(c3: float, c2: float, c1: float, c0: float) -> List[float]:
    """All real roots (with multiplicity) of c3 m^3 + c2 m^2 + c1 m + c0, ascending."""
    if c3 == 0:
        return quadratic_real_roots(c2, c1, c0)
    roots = cubic_real_roots_vec([c3], [c2], [c1], [c0])[0]
    return sorted(float(r) for r in roots if np.isfinite(r))


def soft_threshold(z, tau: float):
    """sign(z) * max(|z| - tau, 0); keeps the phase of complex z."""
    z = np.asarray(z)
    mag = np.abs(z)
    shrink = np.maximum(mag - tau, 0.0)
    out = np.divide(shrink, mag, out=np.zeros(mag.shape), where=mag > 0) * z
    return out.item() if out.ndim == 0 else out


def finite_diff_grad(cost: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6,
                     complex_field: bool = False) -> np.ndarray:
    """Central differences per coordinate; the imaginary axes too for complex fields."""
    x = np.asarray(x, dtype=complex).ravel()
    grad = np.zeros(x.size, dtype=complex)
    for j in range(x.size):
        e = np.zeros(x.size, dtype=complex)
        e[j] = eps
        grad[j] = (cost(x + e) - cost(x - e)) / (2 * eps)
        if complex_field:
            grad[j] += 1j * (cost(x + 1j * e) - cost(x - 1j * e)) / (2 * eps)
    return grad if complex_field else grad.real


@dataclass
class LbfgsResult:
    x: np.ndarray
    iterations: int
    converged: bool
    status: str
    costs: List[float] = field(default_factory=list)


def lbfgs_minimize(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0: np.ndarray,
                   memory: int = 10, n_iters: int = 100, gtol: float = 1e-10,
                   callback: Optional[Callable[[int, np.ndarray], None]] = None) -> LbfgsResult:
    """Two-loop L-BFGS on real vectors with a strong-Wolfe line search (c1=1e-4, c2=0.9).

    ``fun`` returns (cost, gradient). Curvature pairs with s'y <= 0 are discarded.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    s_hist: List[np.ndarray] = []
    y_hist: List[np.ndarray] = []
    costs = [float(f)]
    status = "max_iters"

    cache = {}

    def cost_only(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = fun(z)
        return cache[key][0]

    def grad_only(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = fun(z)
        return cache[key][1]

    k = 0
    while k < n_iters:
        if np.linalg.norm(g) <= gtol:
            status = "converged"
            break
        q = g.copy()
        alphas = []
        for s, yv in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / np.dot(yv, s)
            a = rho * np.dot(s, q)
            q -= a * yv
            alphas.append((rho, a))
        if s_hist:
            q *= np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
        else:
            q /= max(np.linalg.norm(g), 1.0)
        for (s, yv), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = rho * np.dot(yv, q)
            q += (a - b) * s
        direction = -q

        step, _, _, f_new, _, _ = line_search(cost_only, grad_only, x, direction, gfk=g,
                                                  old_fval=f, c1=1e-4, c2=0.9)
        if step is None:
            if s_hist:
                # drop the memory and retry along steepest descent
                s_hist.clear()
                y_hist.clear()
                continue
            status = "line_search_failed"
            logger.warning(f"L-BFGS line search failed at iteration {k}")
            break
        s = step * direction
        g_new = grad_only(x + s)
        x = x + s
        yv = g_new - g
        if np.dot(s, yv) > 0:
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        f, g = float(f_new), g_new
        costs.append(f)
        k += 1
        if callback is not None:
            callback(k, x)

    return LbfgsResult(x=x, iterations=k, converged=status == "converged", status=status, costs=costs)
