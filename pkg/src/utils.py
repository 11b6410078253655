# src/utils.py
import json
import logging
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np
from dotenv import load_dotenv
from PIL import Image

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class PhaseRetrievalError(Exception):
    """Base class for errors raised by the solver library."""


class ConfigError(PhaseRetrievalError, ValueError):
    """Invalid configuration, unknown keys or missing input files."""


class DimensionError(PhaseRetrievalError, ValueError):
    """Operand length does not match the operator dimension."""

    def __init__(self, what: str, expected: int, got: int):
        super().__init__(f"{what}: expected length {expected}, got {got}")
        self.expected = expected
        self.got = got


class DomainError(PhaseRetrievalError, ValueError):
    """A marginal function was evaluated outside its domain."""


class NumericalError(PhaseRetrievalError, ArithmeticError):
    """Degenerate iterate, zero step denominator or singular system."""


@dataclass(frozen=True)
class Settings:
    output_dir: str
    log_dir: str
    log_level: str


def load_settings() -> Settings:
    load_dotenv()
    return Settings(
        output_dir=os.getenv("PPR_OUTPUT_DIR", "artifacts"),
        log_dir=os.getenv("PPR_LOG_DIR", "logs"),
        log_level=os.getenv("PPR_LOG_LEVEL", "INFO").upper(),
    )


def setup_logging(log_file: Optional[str] = None, level: Optional[str] = None) -> None:
    settings = load_settings()
    if log_file is None:
        timestamp = datetime.now().strftime('%Y%m%d')
        os.makedirs(settings.log_dir, exist_ok=True)
        log_file = os.path.join(settings.log_dir, f'ppr_{timestamp}.log')

    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
    logger.info('Logging setup completed')


def save_json(data: Dict[str, Any], file_path: str) -> None:
    try:
        os.makedirs(os.path.dirname(file_path) or ".", exist_ok=True)
        with open(file_path, "w") as json_file:
            json.dump(data, json_file, indent=4, default=_json_default)
        logger.info(f"Saved {file_path}")
    except OSError as e:
        logger.error(f"Error saving {file_path}: {str(e)}")
        raise


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return str(obj)


def load_pgm(path: str) -> np.ndarray:
    """Read a P2/P5 grayscale image and normalize it to [0, 1]."""
    if not os.path.exists(path):
        raise ConfigError(f"Image file not found: {path}")
    try:
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode not in ("L", "I", "I;16", "I;16B"):
                raise ConfigError(f"{path} is not a grayscale PGM image")
            pixels = np.asarray(img, dtype=float)
    except OSError as e:
        logger.error(f"Failed to read {path}: {str(e)}")
        raise ConfigError(f"Unreadable image {path}: {e}") from e

    peak = pixels.max()
    return pixels / peak if peak > 0 else pixels
