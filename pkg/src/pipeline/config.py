"""Run configuration: nested dataclasses loaded from JSON plus dotted-key overrides."""
import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Sequence

from src.components.forward_models import FieldTag
from src.components.mm import CurvatureKind, InnerConfig
from src.components.wf import StepKind
from src.utils import ConfigError

logger = logging.getLogger(__name__)

MODEL_VARIANTS = ("gaussian", "file", "masked_dft", "canonical_dft")
ALGORITHMS = ("wf", "mm", "admm", "lbfgs")
OBJECTIVES = ("poisson", "gaussian")
REGULARIZERS = ("none", "huber_tv", "l1")
BUILTIN_SIGNALS = ("blocks", "disk", "random_complex")


@dataclass
class ModelConfig:
    variant: str = "gaussian"
    rows: Optional[int] = None
    complex_valued: bool = True
    num_masks: int = 4
    exact_half: bool = False
    path: Optional[str] = None
    reference: str = "cross"
    pad_width: Optional[int] = None
    fft_dims: Optional[List[int]] = None
    mean_count: float = 0.25
    background: float = 0.1
    noiseless: bool = False


@dataclass
class SignalConfig:
    source: str = "blocks"
    size: int = 64
    dims: Optional[List[int]] = None
    field: str = FieldTag.REAL_NONNEGATIVE.value


@dataclass
class AlgorithmConfig:
    name: str = "wf"
    objective: str = "poisson"
    step: str = StepKind.FISHER_POISSON.value
    shrink: float = 0.5
    sufficient_decrease: float = 0.01
    initial_step: float = 1.0
    max_trials: int = 30
    truncation: bool = False
    a_h: float = 10.0
    curvature: str = CurvatureKind.IMPROVED.value
    rho0: float = 8.0
    memory: int = 10
    init_iters: int = 300
    trace_objective: Optional[str] = None


@dataclass
class RegularizerConfig:
    kind: str = "none"
    beta: float = 32.0
    alpha: float = 0.1


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    n_iters: int = 100
    psnr_peak: Optional[float] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    inner: InnerConfig = field(default_factory=InnerConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> "RunConfig":
        checks = [
            ("model.variant", self.model.variant, MODEL_VARIANTS),
            ("algorithm.name", self.algorithm.name, ALGORITHMS),
            ("algorithm.objective", self.algorithm.objective, OBJECTIVES),
            ("algorithm.step", self.algorithm.step, tuple(k.value for k in StepKind)),
            ("algorithm.curvature", self.algorithm.curvature, tuple(k.value for k in CurvatureKind)),
            ("regularizer.kind", self.regularizer.kind, REGULARIZERS),
            ("signal.field", self.signal.field, tuple(f.value for f in FieldTag)),
        ]
        if self.algorithm.trace_objective is not None:
            checks.append(("algorithm.trace_objective", self.algorithm.trace_objective, OBJECTIVES))
        for key, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {value!r}")
        if self.n_iters < 0:
            raise ConfigError(f"n_iters must be nonnegative, got {self.n_iters}")
        if self.model.mean_count <= 0 or self.model.background < 0:
            raise ConfigError("model.mean_count must be positive and model.background nonnegative")
        if self.model.variant == "file" and not self.model.path:
            raise ConfigError("model.path is required for the file variant")
        if self.signal.source not in BUILTIN_SIGNALS and not os.path.exists(self.signal.source):
            raise ConfigError(f"signal.source is neither a builtin pattern nor an existing file: {self.signal.source}")
        if self.algorithm.name in ("mm", "admm") and self.algorithm.objective != "poisson":
            raise ConfigError(f"{self.algorithm.name} supports the poisson objective only")
        if self.regularizer.kind == "l1" and self.algorithm.name in ("wf", "lbfgs"):
            raise ConfigError("the l1 regularizer needs a prox-based algorithm (mm or admm)")
        return self


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"Unknown config key: {prefix}{key}")
        default = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid values under {prefix or 'config'}: {e}") from e


def parse_override(item: str):
    """'a.b=value' -> (['a', 'b'], value); the value is parsed as JSON when it can be."""
    if "=" not in item:
        raise ConfigError(f"Override must look like key.path=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    data = copy.deepcopy(data)
    for item in overrides:
        path, value = parse_override(item)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Cannot override inside non-object key {part!r}")
        node[path[-1]] = value
    return data


def config_from_dict(data: Dict[str, Any], overrides: Sequence[str] = ()) -> RunConfig:
    return _build(RunConfig, apply_overrides(data, overrides)).validate()


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            logger.error(f"Error parsing {path}: {str(e)}")
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    config = config_from_dict(data, overrides)
    logger.info(f"Loaded config {config.name!r} ({config.algorithm.name}, seed {config.seed})")
    return config
