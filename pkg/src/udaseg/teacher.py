"""EMA teacher: parameter averaging, pseudo-labels and their quality weight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import ConfigError
from .model import ParamSet, SegNet, check_param_shapes, copy_params


@dataclass
class TeacherState:
    params: ParamSet
    alpha: float = 0.99
    steps_seen: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"ema alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def from_student(cls, student: ParamSet, alpha: float = 0.99) -> "TeacherState":
        return cls(copy_params(student), alpha, 0)


def ema_update(teacher: TeacherState, student: ParamSet) -> TeacherState:
    """``phi <- alpha * phi + (1 - alpha) * theta`` for every tensor."""
    check_param_shapes(teacher.params, student)
    a = teacher.alpha
    new = {}
    for name, phi in teacher.params.items():
        theta = student[name]
        new[name] = (a * phi + (1.0 - a) * theta).astype(phi.dtype, copy=False)
    return TeacherState(new, a, teacher.steps_seen + 1)


def pseudo_label(net: SegNet, teacher: TeacherState, x_t: np.ndarray):
    """Teacher argmax labels and probabilities for a target image or batch."""
    logits, _ = net.forward(teacher.params, x_t)
    probs = grid.softmax_channels(logits)
    return grid.argmax_labels(probs), probs


def quality_scalar(probs: np.ndarray, delta: float) -> float:
    """Fraction of pixels whose top class probability strictly exceeds ``delta``."""
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"quality threshold delta must lie in [0, 1], got {delta}")
    top = probs.max(axis=-1)
    return float(np.count_nonzero(top > delta) / top.size)
