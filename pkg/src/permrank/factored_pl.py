"""Factored Plackett-Luce model with per-stage damping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Dataset, FactorPair, RankedList, init_factors, suffix_log_denominators
from .optim import Schedule, StepSize, ascent_step
from .pairwise import RegWeights

DAMPING_RULES = ("none", "log")


@dataclass(frozen=True)
class DampingSchedule:
    """Stage weights ``rho``: ``none`` gives 1 everywhere, ``log`` gives
    ``1 / ln(1 + i)`` for 1-based stage ``i``."""

    rule: str = "none"

    def __post_init__(self):
        if self.rule not in DAMPING_RULES:
            raise ValueError(f"unknown damping rule {self.rule!r}; choose from {DAMPING_RULES}")

    def weights(self, n: int) -> np.ndarray:
        if self.rule == "none":
            return np.ones(n)
        return 1.0 / np.log1p(np.arange(1, n + 1, dtype=float))


@dataclass(frozen=True, eq=False)
class FplModel:
    factors: FactorPair
    damping: DampingSchedule = field(default_factory=DampingSchedule)
    reg: RegWeights = field(default_factory=RegWeights)

    def __eq__(self, other):
        if not isinstance(other, FplModel):
            return NotImplemented
        return (self.factors, self.damping, self.reg) == (other.factors, other.damping, other.reg)


def list_log_likelihood(scores: Sequence[float], rho: np.ndarray | None = None) -> float:
    """Damped stage-wise log-probability of the order in which ``scores`` are given.

    Stage ``i`` scales every remaining score by ``rho[i]``.
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    if rho is None:
        return float(np.sum(s - suffix_log_denominators(s)))
    rho = np.asarray(rho, dtype=float)[:n]
    R = rho[:, None] * s[None, :]
    R[np.tril_indices(n, k=-1)] = -np.inf
    return float(np.sum(np.diag(R) - logsumexp(R, axis=1)))


def list_score_gradient(scores: Sequence[float], rho: np.ndarray | None = None) -> np.ndarray:
    """d(log-likelihood)/d(scores) for one list in list order.

    Component ``j`` is ``sum_{i <= j} rho_i (delta_ij - p_ij)`` with ``p_ij``
    the stage-``i`` softmax over the remaining items.
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    rho = np.ones(n) if rho is None else np.asarray(rho, dtype=float)[:n]
    R = rho[:, None] * s[None, :]
    R[np.tril_indices(n, k=-1)] = -np.inf
    P = np.exp(R - logsumexp(R, axis=1, keepdims=True))
    return rho - rho @ P


def log_likelihood(model: FplModel, rl: RankedList) -> float:
    s = model.factors.W[rl.user] @ model.factors.H[:, list(rl.items)]
    rho = None if model.damping.rule == "none" else model.damping.weights(len(rl))
    return list_log_likelihood(s, rho)


def grad_log_likelihood(model: FplModel, rl: RankedList, include_reg: bool = False):
    """Gradient of one list's log-likelihood: ``(dW[user], dH[:, items])``.

    With ``include_reg`` the penalty terms of the touched entries are added.
    """
    f = model.factors
    items = list(rl.items)
    w, Hs = f.W[rl.user], f.H[:, items]
    rho = None if model.damping.rule == "none" else model.damping.weights(len(items))
    gs = list_score_gradient(w @ Hs, rho)
    gw = Hs @ gs
    gh = np.outer(w, gs)
    if include_reg:
        gw = gw - 2.0 * model.reg.alpha * w
        gh = gh - 2.0 * model.reg.beta * Hs
    return gw, gh


class ListBatches:
    """Lists grouped by length so a whole group is scored in one array pass."""

    def __init__(self, data: Dataset):
        groups: dict[int, list] = {}
        for rl in data.lists:
            groups.setdefault(len(rl), []).append(rl)
        self.groups = [
            (np.array([rl.user for rl in g]), np.array([rl.items for rl in g]))
            for _, g in sorted(groups.items())
        ]

    def scores(self, W: np.ndarray, H: np.ndarray):
        for users, items in self.groups:
            yield users, items, np.einsum("bk,kbn->bn", W[users], H[:, items])


def _stage_logits(S: np.ndarray, rho: np.ndarray) -> np.ndarray:
    n = S.shape[1]
    R = rho[None, :, None] * S[:, None, :]  # [list, stage i, item j]
    lo = np.tril_indices(n, k=-1)
    R[:, lo[0], lo[1]] = -np.inf
    return R


def batched_log_likelihood(W, H, batches: ListBatches, damping: DampingSchedule) -> float:
    total = 0.0
    for _, _, S in batches.scores(W, H):
        R = _stage_logits(S, damping.weights(S.shape[1]))
        total += float(np.sum(np.einsum("bii->b", R) - logsumexp(R, axis=2).sum(axis=1)))
    return total


def batched_gradient(W, H, batches: ListBatches, damping: DampingSchedule):
    """Gradient of the summed list log-likelihoods with respect to ``(W, H)``."""
    gW = np.zeros_like(W)
    gH = np.zeros_like(H)
    for users, items, S in batches.scores(W, H):
        rho = damping.weights(S.shape[1])
        R = _stage_logits(S, rho)
        P = np.exp(R - logsumexp(R, axis=2, keepdims=True))
        gs = rho[None, :] - np.einsum("i,bij->bj", rho, P)
        gW[users] += np.einsum("bn,kbn->bk", gs, H[:, items])
        contrib = W[users][:, None, :] * gs[:, :, None]  # [list, slot, k]
        np.add.at(gH.T, items, contrib)
    return gW, gH


def objective(model: FplModel, data: Dataset) -> float:
    """Regularized log-likelihood: sum of list log-likelihoods minus the L2 penalty."""
    f = model.factors
    return sum(log_likelihood(model, rl) for rl in data.lists) - model.reg.penalty(f.W, f.H)


def objective_gradient(model: FplModel, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    f = model.factors
    gW = -2.0 * model.reg.alpha * f.W
    gH = -2.0 * model.reg.beta * f.H
    for rl in data.lists:
        gw, gh = grad_log_likelihood(model, rl)
        gW[rl.user] += gw
        gH[:, list(rl.items)] += gh
    return gW, gH


def train_fpl(
    data: Dataset,
    K: int,
    damping: DampingSchedule = DampingSchedule(),
    reg: RegWeights = RegWeights(),
    schedule: Schedule = Schedule(),
    init: FactorPair | None = None,
    fit_users: bool = True,
) -> tuple[FplModel, list[float]]:
    """Alternating full-batch ascent: a W phase with H fixed, then an H phase.

    Each phase takes ``schedule.inner_steps`` backtracking steps. With
    ``fit_users=False`` only ``H`` is updated. Returns the model and the
    objective trace (initial value first, one entry per epoch).
    """
    factors = init if init is not None else init_factors(
        data.num_users, data.num_items, K, np.random.default_rng(schedule.seed)
    )
    W, H = np.array(factors.W), np.array(factors.H)
    batches = ListBatches(data)

    def value_of(W_, H_):
        if not (np.all(np.isfinite(W_)) and np.all(np.isfinite(H_))):
            return -math.inf
        return batched_log_likelihood(W_, H_, batches, damping) - reg.penalty(W_, H_)

    current = value_of(W, H)
    trace = [current]
    steps = {"W": StepSize(schedule), "H": StepSize(schedule)}
    for epoch in range(schedule.epochs):
        moved = False
        for phase in ("W", "H") if fit_users else ("H",):
            for _ in range(schedule.inner_steps):
                gW, gH = batched_gradient(W, H, batches, damping)
                if phase == "W":
                    (W,), current, eta = ascent_step(
                        lambda p: value_of(p[0], H), [W], [gW - 2.0 * reg.alpha * W], current,
                        steps["W"].eta, schedule.max_halvings, where="fpl W-phase", epoch=epoch,
                    )
                else:
                    (H,), current, eta = ascent_step(
                        lambda p: value_of(W, p[0]), [H], [gH - 2.0 * reg.beta * H], current,
                        steps["H"].eta, schedule.max_halvings, where="fpl H-phase", epoch=epoch,
                    )
                steps[phase].update(eta)
                moved |= eta is not None
        trace.append(current)
        if not moved:
            break
    return FplModel(FactorPair(W, H), damping, reg), trace


def predict_sort(model: FplModel | FactorPair, user: int, candidates: Sequence[int]) -> list[int]:
    """Candidates by descending score, ties by ascending item index."""
    f = model.factors if isinstance(model, FplModel) else model
    if not 0 <= user < f.num_users:
        raise KeyError(f"unknown user {user}")
    cand = [int(y) for y in candidates]
    if not cand:
        return []
    s = f.W[user] @ f.H[:, cand]
    return sort_by_score(cand, s)


def sort_by_score(items: Sequence[int], scores: Sequence[float]) -> list[int]:
    return [y for _, y in sorted(zip((-float(v) for v in scores), items))]


def rank_by_insertion(model: FplModel | FactorPair, user: int, seen: Sequence[int], candidates: Sequence[int]) -> list[int]:
    """Insertion ranking with the user's scores as a single community.

    Same slot rule and tie rules as the latent model's ``rank_unseen``;
    damping is not used at prediction time.
    """
    from .latent_pl import MixtureModel, rank_unseen

    f = model.factors if isinstance(model, FplModel) else model
    if not 0 <= user < f.num_users:
        raise KeyError(f"unknown user {user}")
    single = MixtureModel(np.ones((1, 1)), (f.W[user] @ f.H)[None, :])
    return rank_unseen(single, 0, seen, candidates)
