"""Full-batch ascent with step halving, shared by all trainers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DivergenceError


@dataclass(frozen=True)
class Schedule:
    """Step schedule for backtracking ascent.

    The first move tries ``step``; a rejected move halves the step (up to
    ``max_halvings`` times). After an accepted move with step ``eta`` the
    next move starts from ``eta * grow``.
    """

    epochs: int = 100
    step: float = 0.1
    seed: int = 0
    max_halvings: int = 30
    inner_steps: int = 1
    grow: float = 2.0


class StepSize:
    """Carries the backtracking step between moves of one parameter block."""

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.eta = schedule.step

    def update(self, accepted: float | None) -> None:
        if accepted is not None:
            self.eta = accepted * self.schedule.grow


def ascent_step(
    objective: Callable[[Sequence[np.ndarray]], float],
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    current: float,
    step: float,
    max_halvings: int,
    *,
    where: str = "ascent",
    epoch: int | None = None,
) -> tuple[list[np.ndarray], float, float | None]:
    """One backtracking ascent move ``params + eta * grads``.

    Returns ``(params, value, eta)``; ``eta`` is ``None`` when no halving of
    the step improved on ``current`` (params then come back unchanged).
    """
    if not math.isfinite(current):
        raise DivergenceError(f"{where}: non-finite objective at step {epoch}", step=epoch, phase=where)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"{where}: non-finite gradient at step {epoch}", step=epoch, phase=where)
    eta = step
    for _ in range(max_halvings + 1):
        trial = [p + eta * g for p, g in zip(params, grads)]
        value = objective(trial)
        if math.isfinite(value) and value >= current:
            return trial, value, eta
        eta *= 0.5
    return [np.array(p, copy=True) for p in params], current, None
