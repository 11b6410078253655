"""Linear forward models A for intensity measurements y_i ~ Poisson(|a_i'x|^2 + b_i).

All variants share the scale factor c and background b. The canonical DFT model
is affine (its reference block contributes a fixed offset); ``apply`` returns the
full mean field while ``apply_linear``/``adjoint`` act on the linear part only.
"""
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from src.utils import ConfigError, DimensionError, NumericalError

logger = logging.getLogger(__name__)


class FieldTag(str, Enum):
    REAL = "real"
    COMPLEX = "complex"
    REAL_NONNEGATIVE = "real_nonnegative"

    @property
    def is_real(self) -> bool:
        return self is not FieldTag.COMPLEX


@dataclass
class SignalVector:
    values: np.ndarray
    field: FieldTag = FieldTag.COMPLEX
    dims: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).ravel()
        self.field = FieldTag(self.field)
        if self.values.size == 0:
            raise ValueError("Signal must have at least one entry.")
        if self.dims is not None:
            self.dims = tuple(int(d) for d in self.dims)
            if self.dims[0] * self.dims[1] != self.values.size:
                raise DimensionError("signal dims", self.values.size, self.dims[0] * self.dims[1])
        if self.field.is_real and np.any(self.values.imag != 0):
            raise ValueError(f"{self.field.value} signal has nonzero imaginary part.")
        if self.field is FieldTag.REAL_NONNEGATIVE and np.any(self.values.real < 0):
            raise ValueError("real_nonnegative signal has negative entries.")

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def as_image(self) -> np.ndarray:
        return self.values.reshape(self.dims) if self.dims else self.values


def project_to_field(x: np.ndarray, field: FieldTag) -> np.ndarray:
    """Map an iterate back onto the signal's field (real part, then clamp)."""
    if field is FieldTag.COMPLEX:
        return x
    x = np.real(x).astype(complex)
    if field is FieldTag.REAL_NONNEGATIVE:
        x = np.maximum(x.real, 0.0).astype(complex)
    return x


class ForwardModel(ABC):
    """Scaled system matrix c*A with a nonnegative mean background b."""

    variant: str = "abstract"

    def __init__(self, rows: int, cols: int, scale: float = 1.0,
                 background: Optional[np.ndarray] = None):
        if rows < 1 or cols < 1:
            raise ValueError(f"Model dimensions must be positive, got {rows}x{cols}.")
        self.rows = int(rows)
        self.cols = int(cols)
        self.scale = float(scale)
        if background is None:
            background = np.zeros(self.rows)
        background = np.broadcast_to(np.asarray(background, dtype=float), (self.rows,)).copy()
        if np.any(background < 0) or not np.all(np.isfinite(background)):
            raise ValueError("Background must be finite and nonnegative.")
        background.setflags(write=False)
        self.background = background

    @abstractmethod
    def _forward(self, x: np.ndarray) -> np.ndarray:
        """Unscaled linear part A x."""

    @abstractmethod
    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        """Unscaled A' v."""

    def _offset(self) -> Optional[np.ndarray]:
        return None

    def _check(self, arr, expected: int, what: str) -> np.ndarray:
        arr = np.asarray(arr, dtype=complex).ravel()
        if arr.size != expected:
            raise DimensionError(f"{self.variant} {what}", expected, arr.size)
        return arr

    def apply(self, x) -> np.ndarray:
        x = self._check(x, self.cols, "apply")
        out = self._forward(x)
        offset = self._offset()
        if offset is not None:
            out = out + offset
        return self.scale * out

    def apply_linear(self, x) -> np.ndarray:
        x = self._check(x, self.cols, "apply")
        return self.scale * self._forward(x)

    def adjoint(self, v) -> np.ndarray:
        v = self._check(v, self.rows, "adjoint")
        return self.scale * self._adjoint(v)

    @property
    def offset(self) -> np.ndarray:
        offset = self._offset()
        if offset is None:
            return np.zeros(self.rows, dtype=complex)
        return self.scale * offset

    def normal_diagonal(self) -> Optional[np.ndarray]:
        """Diagonal of A'A (including scale) when A'A is diagonal, else None."""
        return None

    def with_scale(self, scale: float) -> "ForwardModel":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.scale = float(scale)
        return clone

    def with_background(self, background) -> "ForwardModel":
        clone = self.with_scale(self.scale)
        ForwardModel.__init__(clone, self.rows, self.cols, self.scale, background)
        return clone

    def densify(self) -> np.ndarray:
        """Explicit M x N matrix of the linear part (for small oracles only)."""
        eye = np.eye(self.cols, dtype=complex)
        return np.column_stack([self.apply_linear(col) for col in eye])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(rows={self.rows}, cols={self.cols}, scale={self.scale:.6g})"


class DenseModel(ForwardModel):
    variant = "dense"

    def __init__(self, entries: np.ndarray, scale: float = 1.0,
                 background: Optional[np.ndarray] = None):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 2:
            raise ValueError("Dense model needs a 2-D matrix.")
        if not np.all(np.isfinite(entries)):
            raise ValueError("Dense model entries must be finite.")
        super().__init__(entries.shape[0], entries.shape[1], scale, background)
        entries.setflags(write=False)
        self.entries = entries

    def _forward(self, x):
        return self.entries @ x

    def _adjoint(self, v):
        return self.entries.conj().T @ v

    @classmethod
    def gaussian(cls, rows: int, cols: int, seed: int, complex_valued: bool = True,
                 background: Optional[np.ndarray] = None) -> "DenseModel":
        rng = np.random.default_rng(seed)
        entries = rng.standard_normal((rows, cols))
        if complex_valued:
            entries = (entries + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)
        return cls(entries, background=background)


class FileMatrixModel(DenseModel):
    """Dense model read from a CSV of 're:im' entries with an 'M,N' header line."""

    variant = "file"

    def __init__(self, path: str, scale: float = 1.0, background: Optional[np.ndarray] = None):
        self.source = path
        super().__init__(read_matrix_csv(path), scale, background)


def read_matrix_csv(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"Matrix file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip()
    try:
        rows, cols = (int(tok) for tok in header.split(","))
    except ValueError as e:
        raise ConfigError(f"{path}: header must be 'M,N', got {header!r}") from e

    table = pd.read_csv(path, skiprows=1, header=None, dtype=str, skipinitialspace=True)
    if table.shape != (rows, cols):
        raise ConfigError(f"{path}: header says {rows}x{cols}, body is {table.shape[0]}x{table.shape[1]}")
    parts = table.stack().str.split(":", expand=True)
    if parts.shape[1] != 2:
        raise ConfigError(f"{path}: entries must be 're:im' pairs")
    try:
        values = parts[0].astype(float).to_numpy() + 1j * parts[1].astype(float).to_numpy()
    except ValueError as e:
        raise ConfigError(f"{path}: non-numeric entry ({e})") from e
    return values.reshape(rows, cols)


def write_matrix_csv(matrix: np.ndarray, path: str) -> None:
    matrix = np.asarray(matrix, dtype=complex)
    body = pd.DataFrame(matrix).apply(lambda col: col.map(lambda z: f"{z.real!r}:{z.imag!r}"))
    with open(path, "w") as fh:
        fh.write(f"{matrix.shape[0]},{matrix.shape[1]}\n")
        body.to_csv(fh, header=False, index=False)


class MaskedDftModel(ForwardModel):
    """Stacked oversampled DFTs (length 2N-1) of the signal times L binary masks."""

    variant = "masked_dft"

    def __init__(self, masks: np.ndarray, scale: float = 1.0,
                 background: Optional[np.ndarray] = None):
        masks = np.atleast_2d(np.asarray(masks, dtype=float))
        self.num_masks, n = masks.shape
        self.oversampled = 2 * n - 1
        super().__init__(self.num_masks * self.oversampled, n, scale, background)
        masks.setflags(write=False)
        self.masks = masks

    def _forward(self, x):
        return np.fft.fft(self.masks * x, n=self.oversampled, axis=1).ravel()

    def _adjoint(self, v):
        blocks = v.reshape(self.num_masks, self.oversampled)
        back = np.fft.ifft(blocks, axis=1, norm="forward")[:, :self.cols]
        return np.sum(self.masks * back, axis=0)

    def normal_diagonal(self):
        return self.scale ** 2 * self.oversampled * np.sum(self.masks ** 2, axis=0)


def make_masks(n: int, num_masks: int, seed: int, exact_half: bool = False) -> np.ndarray:
    """First mask samples everything; the rest sample about half the entries."""
    rng = np.random.default_rng(seed)
    masks = np.ones((num_masks, n))
    for l in range(1, num_masks):
        if exact_half:
            row = np.zeros(n)
            row[rng.permutation(n)[: n // 2]] = 1.0
        else:
            row = (rng.random(n) < 0.5).astype(float)
        masks[l] = row
    return masks


class CanonicalDftModel(ForwardModel):
    """2-D DFT of the horizontal concatenation [x, 0, R] with a known reference R."""

    variant = "canonical_dft"

    def __init__(self, image_dims: Tuple[int, int], reference: np.ndarray,
                 pad_width: Optional[int] = None, fft_dims: Optional[Tuple[int, int]] = None,
                 scale: float = 1.0, background: Optional[np.ndarray] = None):
        height, width = (int(d) for d in image_dims)
        reference = np.asarray(reference, dtype=float)
        if reference.ndim != 2 or reference.shape[0] != height:
            raise ValueError(f"Reference must be 2-D with height {height}, got {reference.shape}.")
        if np.any(reference < 0):
            raise ValueError("Reference image must be nonnegative.")
        self.image_dims = (height, width)
        self.pad_width = width if pad_width is None else int(pad_width)
        self.canvas_dims = (height, width + self.pad_width + reference.shape[1])
        if fft_dims is None:
            fft_dims = (2 * self.canvas_dims[0], 2 * self.canvas_dims[1])
        self.fft_dims = tuple(int(d) for d in fft_dims)
        if self.fft_dims[0] < self.canvas_dims[0] or self.fft_dims[1] < self.canvas_dims[1]:
            raise ValueError(f"fft_dims {self.fft_dims} smaller than canvas {self.canvas_dims}.")
        super().__init__(self.fft_dims[0] * self.fft_dims[1], height * width, scale, background)

        reference.setflags(write=False)
        self.reference = reference
        canvas = np.zeros(self.canvas_dims)
        canvas[:, width + self.pad_width:] = reference
        self._reference_spectrum = np.fft.fft2(canvas, s=self.fft_dims).ravel()

    def _forward(self, x):
        return np.fft.fft2(x.reshape(self.image_dims), s=self.fft_dims).ravel()

    def _adjoint(self, v):
        back = np.fft.ifft2(v.reshape(self.fft_dims), norm="forward")
        height, width = self.image_dims
        return back[:height, :width].ravel()

    def _offset(self):
        return self._reference_spectrum

    def normal_diagonal(self):
        return np.full(self.cols, self.scale ** 2 * self.rows, dtype=float)


def cross_reference(height: int, width: int) -> np.ndarray:
    """Builtin binary reference: a centered cross with a corner block."""
    ref = np.zeros((height, width))
    ref[height // 2, :] = 1.0
    ref[:, width // 2] = 1.0
    ref[: max(1, height // 4), : max(1, width // 4)] = 1.0
    return ref


@dataclass
class MeasurementSet:
    y: np.ndarray
    model: ForwardModel
    seed: int
    mean_count: float = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.size != self.model.rows:
            raise DimensionError("measurements", self.model.rows, self.y.size)
        if np.any(self.y < 0):
            raise ValueError("Measurements must be nonnegative.")
        self.mean_count = float(np.mean(self.y))

    @property
    def background(self) -> np.ndarray:
        return self.model.background


def mean_intensity(model: ForwardModel, x) -> np.ndarray:
    return np.abs(model.apply(x)) ** 2 + model.background


def calibrate_scale(model: ForwardModel, x_true, target_mean: float) -> float:
    """Scale c with mean(|c A x|^2 + b) = target_mean; store it via ``model.with_scale``."""
    if target_mean <= 0:
        raise ValueError(f"target_mean must be positive, got {target_mean}")
    x = np.asarray(x_true, dtype=complex).ravel()
    if not np.any(x):
        raise ValueError("Cannot calibrate against a zero signal.")

    signal_power = np.mean(np.abs(model.with_scale(1.0).apply(x)) ** 2)
    mean_background = float(np.mean(model.background))
    excess = target_mean - mean_background
    if signal_power == 0:
        if np.isclose(excess, 0.0, rtol=0, atol=1e-15 * max(1.0, target_mean)):
            logger.warning("Signal contributes no intensity; background alone meets the target.")
            return 0.0
        raise NumericalError(
            f"A x = 0 so the mean count is fixed at {mean_background:.6g}; target {target_mean} unattainable")
    if excess < 0:
        raise NumericalError(
            f"Target mean {target_mean} is below the mean background {mean_background:.6g}")
    scale = float(np.sqrt(excess / signal_power))
    logger.info(f"Calibrated {model.variant} scale to {scale:.6g} for mean count {target_mean}")
    return scale


def simulate_poisson(model: ForwardModel, x_true, seed: int) -> MeasurementSet:
    """Draw y_i ~ Poisson(|a_i'x|^2 + b_i) independently; reproducible for a fixed seed."""
    means = mean_intensity(model, x_true)
    assert np.all(means >= 0) and np.all(np.isfinite(means)), "Poisson means must be finite and nonnegative"
    # numpy draws by inversion below mean 10 and by PTRS above
    rng = np.random.default_rng(seed)
    y = rng.poisson(means)
    measurements = MeasurementSet(y=y, model=model, seed=int(seed))
    logger.info(f"Simulated {model.rows} counts, mean count {measurements.mean_count:.4f}")
    return measurements
