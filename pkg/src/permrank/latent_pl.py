"""Latent-community Plackett-Luce model.

Every stage of a user's list is generated by a mixture over ``K``
communities: stage ``i`` picks ``items[i]`` from the remaining suffix with
probability ``sum_z P(z|u) softmax_z(i)``, where ``softmax_z`` uses the
community score row ``community_scores[z]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Dataset, RankedList, init_uniform, suffix_log_denominators_rows
from .optim import Schedule, StepSize, ascent_step

MIXTURE_FLOOR = 1e-12
COMPLEMENT_LIMIT = math.log(0.999)  # above this, log(1 - p) from p loses too many digits


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``mixture[u, z] = P(z|u)``; ``community_scores[z, y]`` is the score of
    item ``y`` under community ``z``."""

    mixture: np.ndarray
    community_scores: np.ndarray

    def __post_init__(self):
        mix = np.array(self.mixture, dtype=float)
        cs = np.array(self.community_scores, dtype=float)
        if mix.ndim != 2 or cs.ndim != 2 or mix.shape[1] != cs.shape[0]:
            raise ValueError(f"incompatible shapes {mix.shape} and {cs.shape}")
        if np.any(mix < 0) or not np.allclose(mix.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("mixture rows must be non-negative and sum to 1")
        if not np.all(np.isfinite(cs)):
            raise ValueError("community scores must be finite")
        mix.flags.writeable = False
        cs.flags.writeable = False
        object.__setattr__(self, "mixture", mix)
        object.__setattr__(self, "community_scores", cs)

    @property
    def K(self) -> int:
        return self.mixture.shape[1]

    @property
    def num_users(self) -> int:
        return self.mixture.shape[0]

    @property
    def num_items(self) -> int:
        return self.community_scores.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MixtureModel):
            return NotImplemented
        return np.array_equal(self.mixture, other.mixture) and np.array_equal(
            self.community_scores, other.community_scores
        )


def _log_mix(model: MixtureModel, user: int) -> np.ndarray:
    if not 0 <= user < model.num_users:
        raise KeyError(f"unknown user {user}")
    with np.errstate(divide="ignore"):
        return np.log(model.mixture[user])


def log_stage_probs(model: MixtureModel, items: Sequence[int]) -> np.ndarray:
    """``out[z, i] = log P_i(items | z)``, shape ``(K, n)``."""
    S = model.community_scores[:, list(items)]
    return S - suffix_log_denominators_rows(S)


def stage_prob(model: MixtureModel, user: int, items: Sequence[int], i: int, z: int) -> float:
    """Probability that community ``z`` picks ``items[i]`` at 0-based stage ``i``."""
    if not 0 <= i < len(items):
        raise IndexError(f"stage {i} outside list of length {len(items)}")
    if not 0 <= z < model.K:
        raise IndexError(f"community {z} outside [0, {model.K})")
    _log_mix(model, user)
    s = model.community_scores[z, list(items[i:])]
    return float(np.exp(s[0] - logsumexp(s)))


def log_likelihood(model: MixtureModel, rl: RankedList) -> float:
    """``sum_i log sum_z P(z|u) P_i(pi|z)``; one suffix pass per community."""
    lp = log_stage_probs(model, rl.items)
    return float(np.sum(logsumexp(_log_mix(model, rl.user)[:, None] + lp, axis=0)))


def total_log_likelihood(model: MixtureModel, data: Dataset) -> float:
    return sum(log_likelihood(model, rl) for rl in data.lists)


@dataclass(frozen=True)
class Responsibilities:
    """``values[k][z, i]``: posterior of community ``z`` at stage ``i`` of
    ``data.lists[k]``."""

    values: tuple[np.ndarray, ...]


def e_step(model: MixtureModel, data: Dataset) -> Responsibilities:
    out = []
    for rl in data.lists:
        a = _log_mix(model, rl.user)[:, None] + log_stage_probs(model, rl.items)
        out.append(np.exp(a - logsumexp(a, axis=0, keepdims=True)))
    return Responsibilities(tuple(out))


def m_step_mixture(resp: Responsibilities, data: Dataset, mixture: np.ndarray) -> np.ndarray:
    """Closed-form update: each observed user's row becomes the stage average
    of its responsibilities. Rows of users without a list are kept."""
    new = np.array(mixture, dtype=float, copy=True)
    for rl, Q in zip(data.lists, resp.values):
        row = np.maximum(Q.mean(axis=1), MIXTURE_FLOOR)
        new[rl.user] = row / row.sum()
    return new


def lower_bound(model: MixtureModel, resp: Responsibilities, data: Dataset) -> float:
    """EM surrogate ``sum Q log(P(z|u) P_i(pi|z))`` (0 log 0 read as 0)."""
    total = 0.0
    for rl, Q in zip(data.lists, resp.values):
        a = _log_mix(model, rl.user)[:, None] + log_stage_probs(model, rl.items)
        mask = Q > 0
        total += float(np.sum(Q[mask] * a[mask]))
    return total


def m_step_scores_grad(model: MixtureModel, resp: Responsibilities, data: Dataset) -> np.ndarray:
    """Gradient of :func:`lower_bound` with respect to ``community_scores``."""
    G = np.zeros_like(model.community_scores)
    for rl, Q in zip(data.lists, resp.values):
        items = list(rl.items)
        n = len(items)
        S = model.community_scores[:, items]
        logden = suffix_log_denominators_rows(S)
        L = S[:, None, :] - logden[:, :, None]  # [z, stage i, item j]
        lo = np.tril_indices(n, k=-1)
        L[:, lo[0], lo[1]] = -np.inf
        G[:, items] += Q - np.einsum("zi,zij->zj", Q, np.exp(L))
    return G


def init_mixture_model(num_users: int, num_items: int, K: int, rng: np.random.Generator) -> MixtureModel:
    if K < 1:
        raise ValueError("K must be at least 1")
    mixture = rng.dirichlet(np.ones(K), size=num_users)
    mixture = np.maximum(mixture, MIXTURE_FLOOR)
    mixture /= mixture.sum(axis=1, keepdims=True)
    return MixtureModel(mixture, init_uniform(rng, (K, num_items)))


def em_train(
    data: Dataset,
    K: int,
    iters: int = 50,
    inner_steps: int = 3,
    seed: int = 0,
    step: float = 0.1,
    init: MixtureModel | None = None,
    max_halvings: int = 30,
    grow: float = 2.0,
) -> tuple[MixtureModel, list[float]]:
    """EM: E-step, closed-form mixture update, then ``inner_steps`` backtracking
    ascent steps on the community scores with the responsibilities fixed.

    Returns the model and the incomplete log-likelihood trace (initial value
    first, one entry per iteration).
    """
    model = init if init is not None else init_mixture_model(
        data.num_users, data.num_items, K, np.random.default_rng(seed)
    )
    trace = [total_log_likelihood(model, data)]
    eta_next = StepSize(Schedule(step=step, grow=grow))
    for it in range(iters):
        resp = e_step(model, data)
        model = MixtureModel(m_step_mixture(resp, data, model.mixture), model.community_scores)
        mixture = model.mixture

        def bound_at(p):
            try:
                return lower_bound(MixtureModel(mixture, p[0]), resp, data)
            except ValueError:
                return -math.inf

        scores = np.array(model.community_scores)
        current = bound_at([scores])
        for _ in range(inner_steps):
            grad = m_step_scores_grad(MixtureModel(mixture, scores), resp, data)
            (scores,), current, eta = ascent_step(
                bound_at, [scores], [grad], current, eta_next.eta, max_halvings, where="em M-step", epoch=it
            )
            eta_next.update(eta)
        model = MixtureModel(mixture, scores)
        trace.append(total_log_likelihood(model, data))
    return model, trace


def schedule_em(data: Dataset, K: int, schedule: Schedule, init: MixtureModel | None = None):
    """:func:`em_train` driven by a :class:`Schedule` (``inner_steps`` per M-step)."""
    return em_train(
        data, K, iters=schedule.epochs, inner_steps=schedule.inner_steps, seed=schedule.seed,
        step=schedule.step, init=init, max_halvings=schedule.max_halvings, grow=schedule.grow,
    )


# ---------------------------------------------------------------------------
# prediction

@dataclass(frozen=True)
class InsertionSweep:
    """Log-probability of the extended list for every insertion slot
    (``log_probs[j]``: new item at 0-based position ``j``), and the number of
    per-community stage factors evaluated to get them."""

    log_probs: np.ndarray
    evaluations: int

    @property
    def best(self) -> tuple[int, float]:
        j = int(np.argmax(self.log_probs))  # first maximum: smaller position wins ties
        return j, float(self.log_probs[j])


def insertion_sweep(model: MixtureModel, user: int, seen: Sequence[int], item: int) -> InsertionSweep:
    """Score every insertion slot of ``item`` into ``seen`` in one left-to-right pass.

    Slot 0 is evaluated in full ((n+1) stage mixtures). Moving the new item
    from slot ``j`` to ``j+1`` changes only stages ``j`` and ``j+1``, so the
    log-probability is updated by the log-odds of those two stage mixtures
    (4 mixtures, K factors each). On the last move both affected stages have
    two candidates at most, and the new stage-``n-1`` mixture is the
    complement of the old one, so no factor is evaluated (unless that
    mixture is so close to 1 that its complement must be computed directly).
    """
    seen = [int(y) for y in seen]
    if item in seen:
        raise ValueError(f"item {item} is already in the list")
    log_mix = _log_mix(model, user)
    K = model.K
    n = len(seen)
    sy = model.community_scores[:, item]
    if n == 0:
        return InsertionSweep(np.array([0.0]), K)
    S = model.community_scores[:, seen]
    logB = np.full((K, n + 1), -np.inf)
    logB[:, :n] = suffix_log_denominators_rows(S)
    count = 0

    def mix(num, den):
        nonlocal count
        count += K
        return float(logsumexp(log_mix + num - den))

    with_new = np.logaddexp(sy[:, None], logB)  # suffix sums once the new item is still unplaced

    log_probs = np.empty(n + 1)
    factors = [mix(sy, with_new[:, 0])] + [mix(S[:, i], logB[:, i]) for i in range(n)]
    log_probs[0] = sum(factors)
    last = factors[0]  # stage mixture of the new item at its current slot
    for j in range(n):
        if j < n - 1:
            old_j = mix(sy, with_new[:, j])
            old_j1 = mix(S[:, j], logB[:, j])
            new_j = mix(S[:, j], with_new[:, j])
            new_j1 = mix(sy, with_new[:, j + 1])
            log_probs[j + 1] = log_probs[j] + new_j + new_j1 - old_j - old_j1
            last = new_j1
        else:
            if last < COMPLEMENT_LIMIT:
                comp = math.log(-math.expm1(last)) if last > -math.log(2) else math.log1p(-math.exp(last))
            else:
                # 1 - p has no significant digits left; evaluate the factor itself
                comp = mix(S[:, j], with_new[:, j])
            log_probs[j + 1] = log_probs[j] + comp - last
    return InsertionSweep(log_probs, count)


def insert_position(model: MixtureModel, user: int, seen: Sequence[int], item: int) -> tuple[int, float]:
    """Best 0-based insertion position of ``item`` and its log-probability."""
    return insertion_sweep(model, user, seen, item).best


def rank_unseen(model: MixtureModel, user: int, seen: Sequence[int], candidates: Sequence[int]) -> list[int]:
    """Rank candidates by best insertion slot, then by insertion
    log-probability (higher first), then by item index."""
    seen_set = set(int(y) for y in seen)
    keyed = []
    for y in candidates:
        y = int(y)
        if y in seen_set:
            raise ValueError(f"candidate {y} is already in the seen list")
        j, lp = insert_position(model, user, seen, y)
        keyed.append((j, -lp, y))
    return [y for _, _, y in sorted(keyed)]
