"""L-BFGS baseline runner on the (optionally Huber-TV regularized) ML costs."""
import logging
from typing import Optional

import numpy as np

from src.components.forward_models import FieldTag, project_to_field
from src.components.init_eval import RunState, TraceRecorder
from src.components.numerics import lbfgs_minimize
from src.components.objectives import HuberTV, _Objective, total_cost, total_gradient
from src.utils import NumericalError

logger = logging.getLogger(__name__)


def pack(x: np.ndarray, field: FieldTag) -> np.ndarray:
    x = np.asarray(x, dtype=complex).ravel()
    return x.real.copy() if field.is_real else np.concatenate([x.real, x.imag])


def unpack(z: np.ndarray, field: FieldTag) -> np.ndarray:
    if field.is_real:
        return np.asarray(z, dtype=complex)
    n = z.size // 2
    return z[:n] + 1j * z[n:]


def run_lbfgs(obj: _Objective, reg: Optional[HuberTV], x0, n_iters: int, memory: int = 10, x_true=None,
              trace_objective: Optional[_Objective] = None, peak: Optional[float] = None) -> RunState:
    """Complex signals are optimized as stacked [Re x, Im x]; Re<grad, d> is the real gradient pairing."""
    if n_iters < 0:
        raise ValueError(f"n_iters must be nonnegative, got {n_iters}")
    field = obj.field
    x = project_to_field(np.asarray(x0, dtype=complex).copy(), field)
    report = trace_objective or obj
    recorder = TraceRecorder(lambda z: total_cost(report, reg, z), x_true, peak)
    logger.info(f"L-BFGS start: {obj.name} objective, memory {memory}, {n_iters} iterations")
    if n_iters == 0:
        return RunState(x=x, trace=recorder.finish("completed"), algorithm="lbfgs")

    def fun(z):
        u = unpack(z, field)
        return total_cost(obj, reg, u), pack(total_gradient(obj, reg, u), field)

    def on_iteration(k, z):
        recorder.stop()
        recorder.record(k, project_to_field(unpack(z, field), field))
        recorder.start()

    recorder.start()
    try:
        result = lbfgs_minimize(fun, pack(x, field), memory=memory, n_iters=n_iters, callback=on_iteration)
        status = "completed" if result.status != "line_search_failed" else "stalled: line search failed"
        x = project_to_field(unpack(result.x, field), field)
    except NumericalError as e:
        status = f"failed: {e}"
        logger.error(f"L-BFGS stopped: {str(e)}")
    recorder.stop()
    return RunState(x=x, trace=recorder.finish(status), algorithm="lbfgs",
                    info={"memory": memory, "iterations": len(recorder.trace)})
