"""Pairwise-preference baseline: margins, losses, regularized risk, training."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, DivergenceError, FactorPair, init_factors
from .optim import Schedule, StepSize, ascent_step


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    HINGE = "hinge"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class RegWeights:
    alpha: float = 0.01
    beta: float = 0.01

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("regularization weights must be non-negative")

    def penalty(self, W: np.ndarray, H: np.ndarray) -> float:
        return self.alpha * float(np.sum(W * W)) + self.beta * float(np.sum(H * H))


def margin(scores: Sequence[float], i: int, j: int) -> float:
    """``sign(j - i) * (scores[i] - scores[j])`` for list positions ``i < j``."""
    if i >= j:
        raise ValueError(f"margin needs i < j, got i={i}, j={j}")
    return float(np.sign(j - i) * (scores[i] - scores[j]))


def loss(kind: LossKind | str, d):
    kind = LossKind(kind)
    d = np.asarray(d, dtype=float)
    if kind is LossKind.SQUARED:
        out = (1.0 - d) ** 2
    elif kind is LossKind.HINGE:
        out = np.maximum(0.0, 1.0 - d)
    else:
        out = np.logaddexp(0.0, -d)
    return float(out) if out.ndim == 0 else out


def loss_derivative(kind: LossKind | str, d):
    """dL/dd. The hinge subgradient at the kink ``d = 1`` is taken as 0."""
    kind = LossKind(kind)
    d = np.asarray(d, dtype=float)
    if kind is LossKind.SQUARED:
        out = -2.0 * (1.0 - d)
    elif kind is LossKind.HINGE:
        out = np.where(d < 1.0, -1.0, 0.0)
    else:
        out = -0.5 * (1.0 - np.tanh(0.5 * d))  # -sigmoid(-d), overflow-free
    return float(out) if out.ndim == 0 else out


def _check_dims(factors: FactorPair, data: Dataset) -> None:
    if factors.num_users != data.num_users or factors.num_items != data.num_items:
        raise ValueError(
            f"factor dimensions {factors.num_users}x{factors.num_items} do not match "
            f"dataset {data.num_users}x{data.num_items}"
        )


def _pair_margins(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(s.size, k=1)
    return s[iu] - s[ju], iu, ju


def risk(factors: FactorPair, data: Dataset, kind: LossKind | str, reg: RegWeights) -> float:
    """Mean (over the N users) summed pair loss plus the L2 penalty."""
    _check_dims(factors, data)
    total = 0.0
    for rl in data.lists:
        items = np.asarray(rl.items)
        s = factors.W[rl.user] @ factors.H[:, items]
        d, _, _ = _pair_margins(s)
        if d.size:
            total += float(np.sum(loss(kind, d)))
    return total / data.num_users + reg.penalty(factors.W, factors.H)


def risk_gradient(factors: FactorPair, data: Dataset, kind: LossKind | str, reg: RegWeights):
    """Gradient of :func:`risk` with respect to ``(W, H)``."""
    _check_dims(factors, data)
    W, H = factors.W, factors.H
    gW = 2.0 * reg.alpha * W
    gH = 2.0 * reg.beta * H
    for rl in data.lists:
        items = np.asarray(rl.items)
        Hu = H[:, items]
        s = W[rl.user] @ Hu
        d, iu, ju = _pair_margins(s)
        if not d.size:
            continue
        dl = np.atleast_1d(loss_derivative(kind, d)) / data.num_users
        gs = np.zeros(items.size)
        np.add.at(gs, iu, dl)
        np.add.at(gs, ju, -dl)
        gW[rl.user] += Hu @ gs
        gH[:, items] += np.outer(W[rl.user], gs)
    return gW, gH


def train_pairwise(
    data: Dataset,
    K: int,
    kind: LossKind | str = LossKind.LOGISTIC,
    reg: RegWeights = RegWeights(),
    schedule: Schedule = Schedule(),
    init: FactorPair | None = None,
) -> tuple[FactorPair, list[float]]:
    """Full-batch gradient descent on the regularized pairwise risk.

    Returns the factors and the per-epoch risk trace (initial value first).
    """
    factors = init if init is not None else init_factors(
        data.num_users, data.num_items, K, np.random.default_rng(schedule.seed)
    )

    def neg_risk(p):
        try:
            return -risk(FactorPair(p[0], p[1]), data, kind, reg)
        except ValueError:
            return float("-inf")

    value = -risk(factors, data, kind, reg)
    trace = [-value]
    params = [np.array(factors.W), np.array(factors.H)]
    step = StepSize(schedule)
    for epoch in range(schedule.epochs):
        gW, gH = risk_gradient(FactorPair(*params), data, kind, reg)
        params, value, eta = ascent_step(
            neg_risk, params, [-gW, -gH], value, step.eta, schedule.max_halvings,
            where="pairwise", epoch=epoch,
        )
        trace.append(-value)
        step.update(eta)
        if eta is None:
            break
    if not np.isfinite(value):
        raise DivergenceError("pairwise: non-finite risk", step=schedule.epochs)
    return FactorPair(*params), trace
