"""Single runs and comparison suites: simulate, initialize, solve, write traces."""
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src import __version__
from src.components.admm import run_admm
from src.components.forward_models import (CanonicalDftModel, DenseModel, FieldTag, FileMatrixModel, ForwardModel,
                                           MaskedDftModel, MeasurementSet, SignalVector, calibrate_scale,
                                           cross_reference, make_masks, mean_intensity, simulate_poisson)
from src.components.init_eval import (PSNR_CONVENTION, TRACE_COLUMNS, RunState, TraceRecorder, finalize_init,
                                      scale_fit, spectral_init)
from src.components.mm import run_mm
from src.components.objectives import GaussianObjective, HuberTV, L1Penalty, PoissonObjective, total_cost
from src.components.quasi_newton import run_lbfgs
from src.components.wf import StepRule, TruncationRule, run_wf
from src.pipeline.config import RunConfig, config_from_dict
from src.utils import ConfigError, load_pgm, load_settings, save_json

logger = logging.getLogger(__name__)


def blocks_signal(n: int) -> np.ndarray:
    """Piecewise-constant 1-D phantom with values in [0, 1]."""
    levels = np.array([0.0, 1.0, 0.3, 0.7, 0.0, 0.5, 1.0, 0.2])
    edges = np.linspace(0, n, levels.size + 1).astype(int)
    x = np.zeros(n)
    for level, lo, hi in zip(levels, edges[:-1], edges[1:]):
        x[lo:hi] = level
    return x


def disk_signal(height: int, width: int) -> np.ndarray:
    rows, cols = np.mgrid[:height, :width]
    radius = 0.35 * min(height, width)
    inside = (rows - (height - 1) / 2) ** 2 + (cols - (width - 1) / 2) ** 2 <= radius ** 2
    img = np.where(inside, 1.0, 0.0)
    img[: height // 4, : width // 4] = 0.5
    return img


def random_complex_signal(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def load_true_signal(config: RunConfig) -> SignalVector:
    sig = config.signal
    field_tag = FieldTag(sig.field)
    if sig.source == "blocks":
        values, dims = blocks_signal(sig.size), None
    elif sig.source == "disk":
        dims = tuple(sig.dims) if sig.dims else (8, 8)
        values = disk_signal(*dims)
    elif sig.source == "random_complex":
        if field_tag is not FieldTag.COMPLEX:
            raise ConfigError("random_complex signals need signal.field = complex")
        values, dims = random_complex_signal(sig.size, config.seed + 1), None
    else:
        img = load_pgm(sig.source)
        values, dims = img, img.shape
    return SignalVector(np.asarray(values).ravel(), field_tag, dims)


def build_model(config: RunConfig, signal: SignalVector) -> ForwardModel:
    """Unscaled forward model carrying the configured background."""
    cfg = config.model
    n = len(signal)
    rows = cfg.rows or 8 * n
    if cfg.variant == "gaussian":
        model = DenseModel.gaussian(rows, n, seed=config.seed, complex_valued=cfg.complex_valued)
    elif cfg.variant == "file":
        model = FileMatrixModel(cfg.path)
        if model.cols != n:
            raise ConfigError(f"Matrix in {cfg.path} has {model.cols} columns but the signal has {n} entries")
    elif cfg.variant == "masked_dft":
        model = MaskedDftModel(make_masks(n, cfg.num_masks, seed=config.seed, exact_half=cfg.exact_half))
    else:
        if signal.dims is None:
            raise ConfigError("canonical_dft needs a 2-D signal (disk or a PGM image)")
        if cfg.reference == "cross":
            reference = cross_reference(*signal.dims)
        else:
            reference = load_pgm(cfg.reference)
        model = CanonicalDftModel(signal.dims, reference, pad_width=cfg.pad_width,
                                  fft_dims=tuple(cfg.fft_dims) if cfg.fft_dims else None)
    return model.with_background(cfg.background)


@dataclass
class Instance:
    x_true: SignalVector
    model: ForwardModel
    measurements: MeasurementSet


def make_instance(config: RunConfig) -> Instance:
    signal = load_true_signal(config)
    model = build_model(config, signal)
    model = model.with_scale(calibrate_scale(model, signal.values, config.model.mean_count))
    if config.model.noiseless:
        y = mean_intensity(model, signal.values)
        measurements = MeasurementSet(y=y, model=model, seed=config.seed)
    else:
        measurements = simulate_poisson(model, signal.values, seed=config.seed + 2)
    return Instance(signal, model, measurements)


def make_objective(kind: str, instance: Instance, field_tag: FieldTag):
    cls = PoissonObjective if kind == "poisson" else GaussianObjective
    return cls(instance.model, instance.measurements, field_tag)


def make_regularizer(config: RunConfig, signal: SignalVector):
    reg = config.regularizer
    if reg.kind == "huber_tv":
        return HuberTV.for_signal(len(signal), signal.dims, beta=reg.beta, alpha=reg.alpha)
    if reg.kind == "l1":
        return L1Penalty(reg.beta)
    return None


def initialize(config: RunConfig, instance: Instance) -> SignalVector:
    field_tag = instance.x_true.field
    x0 = spectral_init(instance.model, instance.measurements.y, iters=config.algorithm.init_iters,
                       seed=config.seed + 3, field=field_tag, dims=instance.x_true.dims)
    alpha = scale_fit(instance.model, instance.measurements.y, x0.values)
    logger.info(f"Initial scale fit alpha = {alpha:.6g}")
    return finalize_init(x0, alpha, field_tag)


def algorithm_label(config: RunConfig) -> str:
    algo = config.algorithm
    if algo.name == "wf":
        label = f"wf-{algo.step}"
        if algo.objective == "gaussian" and not algo.step.endswith("gaussian"):
            label += "-gaussian"
        if algo.truncation:
            label += f"-trunc{algo.a_h:g}"
    elif algo.name == "mm":
        label = f"mm-{algo.curvature}"
    else:
        label = algo.name
    if config.regularizer.kind != "none":
        label += f"+{config.regularizer.kind}"
    return label


def solve(config: RunConfig, instance: Instance, x0: SignalVector) -> Tuple[RunState, object, object]:
    algo = config.algorithm
    field_tag = instance.x_true.field
    obj = make_objective(algo.objective, instance, field_tag)
    trace_obj = make_objective(algo.trace_objective, instance, field_tag) if algo.trace_objective else None
    reg = make_regularizer(config, instance.x_true)
    common = dict(x_true=instance.x_true.values, trace_objective=trace_obj, peak=config.psnr_peak)

    if algo.name == "wf":
        rule = StepRule(kind=algo.step, shrink=algo.shrink, sufficient_decrease=algo.sufficient_decrease,
                        initial_step=algo.initial_step, max_trials=algo.max_trials)
        state = run_wf(obj, reg, rule, TruncationRule(algo.truncation, algo.a_h), x0.values, config.n_iters,
                       **common)
    elif algo.name == "mm":
        state = run_mm(obj, reg, algo.curvature, x0.values, config.n_iters, inner=config.inner, **common)
    elif algo.name == "admm":
        state = run_admm(obj, reg, x0.values, rho0=algo.rho0, n_iters=config.n_iters, inner=config.inner,
                         **common)
    else:
        state = run_lbfgs(obj, reg, x0.values, config.n_iters, memory=algo.memory, **common)
    return state, trace_obj or obj, reg


def _init_row(report_obj, reg, x0: SignalVector, x_true: SignalVector, peak) -> pd.DataFrame:
    recorder = TraceRecorder(lambda z: total_cost(report_obj, reg, z), x_true.values, peak)
    recorder.record(0, x0.values)
    return recorder.trace.to_frame()


@dataclass
class ExperimentResult:
    """Artifacts of one run."""
    run_dir: str
    trace: pd.DataFrame
    summary: Dict
    state: RunState

    @property
    def failed(self) -> bool:
        return self.state.status.startswith("failed")


def run_experiment(config: RunConfig, output_dir: Optional[str] = None) -> ExperimentResult:
    """Simulate, initialize and solve; writes trace.csv, summary.json and reconstruction.npy."""
    run_dir = output_dir or os.path.join(load_settings().output_dir, config.name)
    os.makedirs(run_dir, exist_ok=True)
    started = time.perf_counter()
    try:
        instance = make_instance(config)
        x0 = initialize(config, instance)
        state, report_obj, reg = solve(config, instance, x0)
    except Exception as e:
        logger.error(f"Run {config.name!r} failed: {str(e)}")
        raise

    frames = [_init_row(report_obj, reg, x0, instance.x_true, config.psnr_peak)]
    if len(state.trace):
        frames.append(state.trace.to_frame())
    trace = pd.concat(frames, ignore_index=True)[TRACE_COLUMNS]
    trace.to_csv(os.path.join(run_dir, "trace.csv"), index=False)
    np.save(os.path.join(run_dir, "reconstruction.npy"), state.x)

    final = trace.iloc[-1]
    summary = {
        "name": config.name,
        "algorithm": algorithm_label(config),
        "status": state.status,
        "iterations": int(final["iter"]),
        "final_cost": float(final["cost"]),
        "final_nrmse": float(final["nrmse"]),
        "final_psnr": float(final["psnr"]),
        "update_time_s": float(final["time_s"]),
        "wall_time_s": time.perf_counter() - started,
        "mean_count": instance.measurements.mean_count,
        "model_scale": instance.model.scale,
        "psnr_convention": PSNR_CONVENTION,
        "version": __version__,
        "info": {k: v for k, v in state.info.items() if np.ndim(v) == 0},
        "config": config.to_dict(),
    }
    save_json(summary, os.path.join(run_dir, "summary.json"))
    logger.info(f"Run {config.name!r} ({summary['algorithm']}): status {state.status}, "
                f"final cost {summary['final_cost']:.6g}, NRMSE {summary['final_nrmse']:.4g}")
    return ExperimentResult(run_dir=run_dir, trace=trace, summary=summary, state=state)


# Each preset variant is a list of dotted overrides on top of the base config.
SUITE_PRESETS: Dict[str, Dict[str, List[str]]] = {
    "fig5": {
        "wf-fisher": ["algorithm.name=wf", "algorithm.step=fisher_poisson"],
        "wf-backtracking": ["algorithm.name=wf", "algorithm.step=backtracking"],
        "wf-exact-gaussian": ["algorithm.name=wf", "algorithm.objective=gaussian",
                              "algorithm.step=exact_gaussian", "algorithm.trace_objective=poisson"],
        "lbfgs": ["algorithm.name=lbfgs"],
    },
    "poisson_vs_gaussian": {
        "gaussian-wf-fisher": ["algorithm.name=wf", "algorithm.objective=gaussian",
                               "algorithm.step=fisher_gaussian", "algorithm.trace_objective=poisson"],
        "poisson-wf-fisher": ["algorithm.name=wf", "algorithm.step=fisher_poisson"],
        "poisson-wf-fisher-tv": ["algorithm.name=wf", "algorithm.step=fisher_poisson",
                                 "regularizer.kind=huber_tv"],
    },
    "regularized": {
        "wf-fisher": ["algorithm.name=wf", "algorithm.step=fisher_poisson", "regularizer.kind=huber_tv"],
        "wf-backtracking": ["algorithm.name=wf", "algorithm.step=backtracking", "regularizer.kind=huber_tv"],
        "lbfgs": ["algorithm.name=lbfgs", "regularizer.kind=huber_tv"],
        "mm-improved": ["algorithm.name=mm", "algorithm.curvature=improved", "regularizer.kind=huber_tv"],
        "mm-max": ["algorithm.name=mm", "algorithm.curvature=max", "regularizer.kind=huber_tv"],
        "admm": ["algorithm.name=admm", "regularizer.kind=huber_tv"],
    },
    "truncation": {
        "wf": ["algorithm.name=wf", "algorithm.truncation=false"],
        **{f"twf-a{a:g}": ["algorithm.name=wf", "algorithm.truncation=true", f"algorithm.a_h={a}"]
           for a in (1, 5, 10, 50, 100)},
    },
}


@dataclass
class SuiteResult:
    output_dir: str
    medians: Dict[str, pd.DataFrame] = field(default_factory=dict)
    comparison: Optional[pd.DataFrame] = None
    summary: Optional[pd.DataFrame] = None
    failures: List[str] = field(default_factory=list)


def median_trace(traces: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-iteration median over seeds."""
    stacked = pd.concat(traces, ignore_index=True)
    return stacked.groupby("iter", as_index=False)[TRACE_COLUMNS[1:]].median()[TRACE_COLUMNS]


def iterations_to_threshold(medians: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """First iteration at which each median cost reaches the slowest algorithm's final cost."""
    threshold = max(float(df["cost"].iloc[-1]) for df in medians.values())
    rows = []
    for label, df in medians.items():
        hit = df.loc[df["cost"] <= threshold, "iter"]
        rows.append({
            "algorithm": label,
            "threshold_cost": threshold,
            "iters_to_threshold": int(hit.iloc[0]) if len(hit) else np.nan,
            "time_to_threshold_s": float(df.loc[hit.index[0], "time_s"]) if len(hit) else np.nan,
            "final_cost": float(df["cost"].iloc[-1]),
            "final_nrmse": float(df["nrmse"].iloc[-1]),
            "final_psnr": float(df["psnr"].iloc[-1]),
        })
    return pd.DataFrame(rows)


def run_suite(preset: str, seeds: Sequence[int], base: Optional[RunConfig] = None,
              output_dir: Optional[str] = None) -> SuiteResult:
    if preset not in SUITE_PRESETS:
        raise ConfigError(f"Unknown suite preset {preset!r}; choose from {', '.join(SUITE_PRESETS)}")
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("run_suite needs at least one seed")
    base = base or RunConfig()
    root = output_dir or os.path.join(load_settings().output_dir, f"suite_{preset}")
    os.makedirs(root, exist_ok=True)
    result = SuiteResult(output_dir=root)
    long_rows = []
    logger.info(f"Suite {preset}: {len(SUITE_PRESETS[preset])} variants x {len(seeds)} seeds")

    for label, overrides in SUITE_PRESETS[preset].items():
        traces = []
        for seed in seeds:
            config = config_from_dict(base.to_dict(), [*overrides, f"seed={seed}", f"name={label}-seed{seed}"])
            run = run_experiment(config, os.path.join(root, label, f"seed_{seed}"))
            if run.failed:
                result.failures.append(f"{label} seed {seed}: {run.state.status}")
            traces.append(run.trace)
            long_rows.append(run.trace.assign(algorithm=label, seed=seed))
        medians = median_trace(traces)
        medians.to_csv(os.path.join(root, f"median_{base.model.variant}_{label}.csv"), index=False)
        result.medians[label] = medians

    result.comparison = pd.concat(long_rows, ignore_index=True)[["algorithm", "seed", *TRACE_COLUMNS]]
    result.comparison.to_csv(os.path.join(root, "comparison.csv"), index=False)
    result.summary = iterations_to_threshold(result.medians)
    result.summary.to_csv(os.path.join(root, "summary.csv"), index=False)
    save_json({"preset": preset, "seeds": seeds, "failures": result.failures,
               "psnr_convention": PSNR_CONVENTION, "version": __version__,
               "base_config": base.to_dict(), "summary": result.summary.to_dict(orient="records")},
              os.path.join(root, "suite.json"))
    return result
