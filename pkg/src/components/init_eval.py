"""Spectral initialization, scale fitting, global-phase correction and quality metrics."""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.components.forward_models import FieldTag, ForwardModel, SignalVector
from src.components.numerics import PsdOperator, power_method
from src.utils import NumericalError

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 300.0
TRACE_COLUMNS = ["iter", "time_s", "cost", "nrmse", "psnr"]
PSNR_CONVENTION = "psnr = 10*log10(peak^2 * N / ||x_corrected - x_true||^2), peak = max|x_true| unless set"


def _sign(z: complex) -> complex:
    return z / abs(z) if z != 0 else 1.0


def spectral_init(model: ForwardModel, y, iters: int = 300, seed: int = 0,
                  field: FieldTag = FieldTag.COMPLEX, dims=None) -> SignalVector:
    """Unit-norm leading eigenvector of A' diag{y/(y+1)} A.

    For a nonnegative field the eigenvector keeps its signs and is tagged real;
    finalize_init takes the magnitude after scaling.
    """
    y = np.asarray(y, dtype=float).ravel()
    field = FieldTag(field)
    tag = FieldTag.REAL if field is FieldTag.REAL_NONNEGATIVE else field
    weights = y / (y + 1)
    dtype = float if field.is_real else complex

    def normal(u):
        out = model.adjoint(weights * model.apply_linear(u))
        return out.real if field.is_real else out

    if not np.any(weights):
        logger.warning("All counts are zero; spectral initialization falls back to a random unit vector")
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(model.cols)
        if not field.is_real:
            x = x + 1j * rng.standard_normal(model.cols)
        x = x / np.linalg.norm(x)
        return SignalVector(_fit_field(x, field), tag, dims)

    eig, x = power_method(PsdOperator(normal, model.cols, dtype), iters=iters, seed=seed)
    logger.info(f"Spectral initialization: leading eigenvalue {eig:.6g}")
    return SignalVector(_fit_field(x, field), tag, dims)


def _fit_field(x: np.ndarray, field: FieldTag) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if field is FieldTag.REAL_NONNEGATIVE:
        # sign-normalize so the leading vector points into the nonnegative orthant
        if np.sum(x.real) < 0:
            x = -x
        return x.real.astype(complex)
    if field is FieldTag.REAL:
        return x.real.astype(complex)
    return x


def scale_fit(model: ForwardModel, y, x0) -> float:
    """argmin_a ||y - b - |a A x0|^2||_2 = sqrt((y-b)'|Ax0|^2) / ||Ax0||_4^2."""
    intensity = np.abs(model.apply_linear(np.asarray(x0))) ** 2
    fourth = np.sqrt(np.sum(intensity ** 2))
    if fourth == 0:
        raise NumericalError("scale_fit: A x0 = 0")
    excess = float(np.dot(np.asarray(y, dtype=float) - model.background, intensity))
    if excess < 0:
        logger.warning(f"scale_fit: (y-b)'|Ax0|^2 = {excess:.4g} < 0; using scale 0")
        return 0.0
    return float(np.sqrt(excess) / fourth)


def finalize_init(x0, alpha: float, field: FieldTag, dims=None) -> SignalVector:
    field = FieldTag(field)
    scaled = alpha * np.asarray(x0, dtype=complex)
    if field is FieldTag.REAL_NONNEGATIVE:
        scaled = np.abs(scaled)
    elif field is FieldTag.REAL:
        scaled = scaled.real
    if dims is None and isinstance(x0, SignalVector):
        dims = x0.dims
    return SignalVector(scaled, field, dims)


def phase_correct(x_hat, x_true) -> np.ndarray:
    """sign(<x_hat, x_true>) * x_hat, with sign(0) = 1."""
    x_hat = np.asarray(x_hat, dtype=complex)
    return _sign(np.vdot(x_hat, np.asarray(x_true, dtype=complex))) * x_hat


def nrmse(x_hat, x_true) -> float:
    x_true = np.asarray(x_true, dtype=complex)
    return float(np.linalg.norm(phase_correct(x_hat, x_true) - x_true) / np.linalg.norm(x_true))


def psnr(x_hat, x_true, peak: Optional[float] = None) -> float:
    x_true = np.asarray(x_true, dtype=complex)
    if peak is None:
        peak = float(np.max(np.abs(x_true)))
    err = np.linalg.norm(phase_correct(x_hat, x_true) - x_true) ** 2
    if err == 0:
        return PSNR_CAP_DB
    return float(min(10 * np.log10(peak ** 2 * x_true.size / err), PSNR_CAP_DB))


@dataclass
class TraceRecord:
    k: int
    elapsed_seconds: float
    cost: float
    nrmse: float
    psnr: float


@dataclass
class IterationTrace:
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "running"

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.k <= last.k or record.elapsed_seconds < last.elapsed_seconds:
                raise ValueError(f"Trace must advance: got k={record.k} after k={last.k}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.k, r.elapsed_seconds, r.cost, r.nrmse, r.psnr) for r in self.records],
            columns=TRACE_COLUMNS,
        )


@dataclass
class RunState:
    x: np.ndarray
    trace: IterationTrace
    algorithm: str
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.trace.status


class TraceRecorder:
    """Times iterate updates only and appends a metrics row after each one."""

    def __init__(self, cost_fn, x_true=None, peak: Optional[float] = None):
        self.cost_fn = cost_fn
        self.x_true = None if x_true is None else np.asarray(x_true, dtype=complex)
        self.peak = peak
        self.trace = IterationTrace()
        self.elapsed = 0.0
        self._started: Optional[float] = None

    def start(self) -> None:
        self._started = time.perf_counter()

    def stop(self) -> None:
        self.elapsed += time.perf_counter() - self._started
        self._started = None

    def metrics(self, x) -> tuple:
        if self.x_true is None:
            return np.nan, np.nan
        return nrmse(x, self.x_true), psnr(x, self.x_true, self.peak)

    def record(self, k: int, x) -> TraceRecord:
        err, snr = self.metrics(x)
        row = TraceRecord(k=k, elapsed_seconds=self.elapsed, cost=float(self.cost_fn(x)), nrmse=err, psnr=snr)
        self.trace.append(row)
        logger.debug(f"iter {k}: cost={row.cost:.8g} nrmse={err:.4g}")
        return row

    def finish(self, status: str) -> IterationTrace:
        self.trace.status = status
        return self.trace
