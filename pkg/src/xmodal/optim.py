"""Adam, a reduce-on-plateau learning-rate schedule and early stopping."""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidMetric, NumericalFailure, ShapeError

DEFAULT_LR = 1e-4


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig(f"learning rate must be positive, got {self.lr!r}")


def adam_step(state, params, grads):
    """Apply one bias-corrected Adam update to ``params`` in place.

    Moment buffers are created lazily on the first call. A non-finite gradient
    raises :class:`NumericalFailure` before anything is modified.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite gradient, Adam step aborted")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    elif len(state.m) != len(params) or any(m.shape != np.shape(p) for m, p in zip(state.m, params)):
        raise ShapeError("Adam moment buffers do not match the parameters")

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    REDUCE_LR = "reduce_lr"
    STOP = "stop"


@dataclass
class PlateauScheduler:
    """Divide the learning rate by ``factor`` after ``patience`` epochs without improvement.

    The learning rate is recomputed as ``lr0 / factor**reductions`` so repeated
    reductions do not accumulate rounding drift.
    """

    lr0: float = DEFAULT_LR
    patience: int = 5
    factor: float = 10.0
    best_score: float = -math.inf
    epochs_since_improvement: int = 0
    reductions: int = 0

    @property
    def lr(self):
        return self.lr0 / self.factor ** self.reductions


@dataclass
class EarlyStopper:
    patience: int = 10
    best_epoch: int = 0
    best_score: float = -math.inf
    epochs_since_improvement: int = 0
    epoch: int = 0
    improved: bool = False


def scheduler_epoch_end(sched, stopper, val_score):
    """Advance both state machines by one epoch of validation score.

    Improvement means a strict increase. The plateau counter resets after each
    reduction; the stop counter only resets on improvement. When the stop
    patience is reached the decision is ``STOP`` and the caller reverts to
    ``stopper.best_epoch``.
    """
    score = float(val_score)
    if math.isnan(score):
        raise InvalidMetric("validation score is NaN")
    stopper.epoch += 1
    stopper.improved = score > stopper.best_score
    if stopper.improved:
        stopper.best_score = score
        stopper.best_epoch = stopper.epoch
        stopper.epochs_since_improvement = 0
        sched.best_score = score
        sched.epochs_since_improvement = 0
        return Decision.CONTINUE

    stopper.epochs_since_improvement += 1
    sched.epochs_since_improvement += 1
    if stopper.epochs_since_improvement >= stopper.patience:
        return Decision.STOP
    if sched.epochs_since_improvement >= sched.patience:
        sched.reductions += 1
        sched.epochs_since_improvement = 0
        return Decision.REDUCE_LR
    return Decision.CONTINUE
