"""Contrastive Divergence and pseudo-likelihood learning.

Both energies are linear in their parameters, ``-E = theta . phi(perm)``,
so every gradient is a difference of statistics ``phi``: per-item position
weights ``g(pos)`` and, for the pairwise model, ``[y above y2]`` indicators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..core import Dataset, DivergenceError, FactorPair, init_factors, init_uniform
from ..optim import Schedule, StepSize, ascent_step
from ..pairwise import RegWeights
from .mcmc import propose_swap, run_chain, start_chain
from .models import (
    BoundEnergy,
    LogLinearModel,
    PairwiseModel,
    PositionalModel,
    Relocate,
    SublistPerm,
    Swap,
    build_pairwise_params,
)

STRUCTURES = ("relocation", "swapping", "sublist")
MAX_SUBLIST = 6


@dataclass(frozen=True)
class LoglinHyper:
    epochs: int = 100
    step: float = 0.05
    seed: int = 0
    K: int = 5
    tau: int = 5
    reg: RegWeights = field(default_factory=RegWeights)
    chain_steps: int | None = None  # CD chain length; None means n_u
    structure: str = "relocation"
    delta: int = 3
    max_halvings: int = 30


def user_rng(seed: int, epoch: int, user: int) -> np.random.Generator:
    """Independent stream per (epoch, user) so chains never share state."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, user)))


# ---------------------------------------------------------------------------
# parameter plumbing

def params_of(model: LogLinearModel) -> list[np.ndarray]:
    if isinstance(model, PositionalModel):
        return [np.array(model.factors.W), np.array(model.factors.H)]
    return [np.array(model.gamma), np.array(model.lam)]


def with_params(model: LogLinearModel, params: Sequence[np.ndarray]) -> LogLinearModel:
    if isinstance(model, PositionalModel):
        return PositionalModel(FactorPair(params[0], params[1]))
    return model.with_params(params[0], params[1])


def penalty(model: LogLinearModel, reg: RegWeights) -> float:
    a, b = params_of(model)
    return reg.penalty(a, b)


def _stat_gradient(model: LogLinearModel, rl, g_item: np.ndarray, g_pair: np.ndarray | None, grads) -> None:
    """Fold item-level statistic differences for one list into parameter gradients.

    ``g_item[k]``: coefficient on the unary parameter of ``rl.items[k]``;
    ``g_pair[k, l]``: coefficient on ``lam[items[k], items[l]]``.
    """
    items = list(rl.items)
    if isinstance(model, PositionalModel):
        f = model.factors
        Hu = f.H[:, items]
        grads[0][rl.user] += Hu @ g_item
        grads[1][:, items] += np.outer(f.W[rl.user], g_item)
        return
    np.add.at(grads[0], items, g_item)
    if g_pair is None or not model.pairs:
        return
    idx = model.pair_index
    for k, a in enumerate(items):
        for l, b in enumerate(items):
            j = idx.get((a, b))
            if j is not None:
                grads[1][j] += g_pair[k, l]


def _stats(model: LogLinearModel, n: int, pos: np.ndarray):
    """Sufficient statistics for position arrays ``pos[..., k]`` (position of
    list item ``k``): unary weights and, for pairwise models, above-indicators."""
    unary = model.weights(n)[pos]
    pair = None
    if isinstance(model, PairwiseModel):
        pair = (pos[..., :, None] < pos[..., None, :]).astype(float)
    return unary, pair


# ---------------------------------------------------------------------------
# Contrastive Divergence

def cd_gradient(model: LogLinearModel, data: Dataset, seed: int, epoch: int, chain_steps: int | None = None):
    """CD direction: data statistics minus statistics at the end of an
    ``n_u``-step swap chain started from each observed list.

    Returns ``(grads, mean energy gap E_data - E_sample)``.
    """
    grads = [np.zeros_like(p) for p in params_of(model)]
    gap = 0.0
    for rl in data.lists:
        n = len(rl)
        if n < 2:
            continue
        state = start_chain(model, rl.user, rl.items)
        e_data = state.energy
        run_chain(state, propose_swap, chain_steps if chain_steps is not None else n, user_rng(seed, epoch, rl.user))
        gap += e_data - state.energy
        pos_of = {y: i for i, y in enumerate(state.perm)}
        sample_pos = np.array([pos_of[y] for y in rl.items])
        data_pos = np.arange(n)
        u_d, p_d = _stats(model, n, data_pos)
        u_s, p_s = _stats(model, n, sample_pos)
        _stat_gradient(model, rl, u_d - u_s, None if p_d is None else p_d - p_s, grads)
    return grads, gap / max(1, len(data.lists))


def cd_train(
    kind: str,
    data: Dataset,
    hyper: LoglinHyper = LoglinHyper(),
    init: LogLinearModel | None = None,
) -> tuple[LogLinearModel, list[float]]:
    """Contrastive Divergence with one swap chain per user per epoch.

    Update: ``theta += step * (cd_direction - 2 * reg * theta)``. The trace
    records the mean energy gap between data and chain end per epoch.
    """
    model = init if init is not None else init_model(kind, data, hyper)
    trace = []
    reg = (hyper.reg.alpha, hyper.reg.beta)
    for epoch in range(hyper.epochs):
        grads, gap = cd_gradient(model, data, hyper.seed, epoch, hyper.chain_steps)
        params = [p + hyper.step * (g - 2.0 * r * p) for p, g, r in zip(params_of(model), grads, reg)]
        if not all(np.all(np.isfinite(p)) for p in params):
            raise DivergenceError(f"cd: non-finite parameters at epoch {epoch}", step=epoch, phase="cd")
        model = with_params(model, params)
        trace.append(gap)
    return model, trace


def init_model(kind: str, data: Dataset, hyper: LoglinHyper) -> LogLinearModel:
    rng = np.random.default_rng(hyper.seed)
    if kind == "loglin-positional":
        return PositionalModel(init_factors(data.num_users, data.num_items, hyper.K, rng))
    if kind == "loglin-pairwise":
        skel = build_pairwise_params(data, hyper.tau)
        return skel.with_params(init_uniform(rng, skel.num_items), init_uniform(rng, len(skel.pairs)))
    raise ValueError(f"not a log-linear model kind: {kind}")


# ---------------------------------------------------------------------------
# pseudo-likelihood

def relocation_energies(bound: BoundEnergy, perm: Sequence[int], i: int) -> np.ndarray:
    """Energies (relative to ``perm``) of moving ``perm[i]`` to every position.

    One relocation delta to the front, then one adjacent-swap delta per
    position: ``O(n)`` for the whole row.
    """
    n = len(perm)
    g = bound.g(n)
    a = perm[i]
    others = perm[:i] + perm[i + 1:]
    e = np.empty(n)
    e[0] = bound.delta(perm, Relocate(i, 0)) if i else 0.0
    for j in range(n - 1):
        e[j + 1] = e[j] + bound.delta_adjacent(a, others[j], j, g)
    return e


def _check_structure(structure: str, delta: int) -> None:
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}; choose from {STRUCTURES}")
    if structure == "sublist" and not 2 <= delta <= MAX_SUBLIST:
        raise ValueError(f"sublist width must lie in [2, {MAX_SUBLIST}]")


def local_log_laws(model: LogLinearModel, user: int, items: Sequence[int], structure: str, delta: int = 3):
    """Every local conditional law of one list.

    Yields ``(log_probs, current)`` per local structure: log-probabilities
    over its configurations and the index of the observed configuration.
    """
    _check_structure(structure, delta)
    perm = [int(y) for y in items]
    n = len(perm)
    if structure == "sublist" and delta > n:
        raise ValueError(f"sublist width {delta} exceeds list length {n}")
    bound = BoundEnergy(model, user)
    if structure == "relocation":
        for i in range(n):
            e = relocation_energies(bound, perm, i)
            yield -e - logsumexp(-e), i
    elif structure == "swapping":
        for l in range(n):
            for m in range(l + 1, n):
                d = bound.delta(perm, Swap(l, m))
                yield np.array([-np.logaddexp(0.0, -d), -np.logaddexp(0.0, d)]), 0
    else:
        orders = list(itertools.permutations(range(delta)))
        for s in range(n - delta + 1):
            e = np.array([bound.delta(perm, SublistPerm(s, o)) for o in orders])
            yield -e - logsumexp(-e), 0


def pseudo_likelihood(model: LogLinearModel, data: Dataset, structure: str = "relocation", delta: int = 3) -> float:
    """Sum over users and local structures of the observed configuration's local log-probability."""
    _check_structure(structure, delta)
    total = 0.0
    for rl in data.lists:
        if structure == "sublist" and delta > len(rl):
            raise ValueError(f"sublist width {delta} exceeds list length {len(rl)} (user {rl.user})")
        for logp, cur in local_log_laws(model, rl.user, rl.items, structure, delta):
            total += float(logp[cur])
    return total


def _config_positions(n: int, structure: str, delta: int) -> tuple[np.ndarray, int]:
    """Position arrays of every local configuration, grouped: shape
    ``(groups, configs, n)``; the observed configuration's index within a group."""
    if structure == "relocation":
        k = np.arange(n)
        i = k[:, None, None]          # relocated item
        j = k[None, :, None]          # destination
        m = k[None, None, :]          # item whose position we want
        r = m - (m > i)               # rank among the others
        pos = np.where(m == i, j, r + (r >= j))
        pos = np.broadcast_to(pos, (n, n, n)).copy()
        return pos, -1  # observed index varies: equals the group index
    if structure == "swapping":
        l, m = np.triu_indices(n, k=1)
        G = l.size
        pos = np.broadcast_to(np.arange(n), (G, 2, n)).copy()
        pos[np.arange(G), 1, l] = m
        pos[np.arange(G), 1, m] = l
        return pos, 0
    orders = np.array(list(itertools.permutations(range(delta))))
    starts = np.arange(n - delta + 1)
    pos = np.broadcast_to(np.arange(n), (starts.size, len(orders), n)).copy()
    for gi, s in enumerate(starts):
        # item at window slot order[t] goes to position s + t
        for ci, o in enumerate(orders):
            pos[gi, ci, s + o] = s + np.arange(delta)
    return pos, 0


def pseudo_likelihood_gradient(
    model: LogLinearModel, data: Dataset, structure: str = "relocation", delta: int = 3
) -> list[np.ndarray]:
    """Gradient of :func:`pseudo_likelihood`, by enumerating local configurations."""
    _check_structure(structure, delta)
    grads = [np.zeros_like(p) for p in params_of(model)]
    cache: dict[int, tuple[np.ndarray, int]] = {}
    pair_model = isinstance(model, PairwiseModel)
    for rl in data.lists:
        items = list(rl.items)
        n = len(items)
        if structure == "sublist" and delta > n:
            raise ValueError(f"sublist width {delta} exceeds list length {n} (user {rl.user})")
        if n not in cache:
            cache[n] = _config_positions(n, structure, delta)
        pos, cur = cache[n]
        if pos.shape[0] == 0:
            continue
        bound = BoundEnergy(model, rl.user)
        theta = np.array([bound.theta[y] for y in items])
        unary, pair = _stats(model, n, pos)
        neg_e = unary @ theta
        if pair_model:
            lam = np.array([[bound.pair(a, b) for b in items] for a in items])
            neg_e = neg_e + np.einsum("gckl,kl->gc", pair, lam)
        p = np.exp(neg_e - logsumexp(neg_e, axis=1, keepdims=True))
        gidx = np.arange(pos.shape[0])
        cidx = gidx if cur < 0 else np.full(pos.shape[0], cur)
        g_item = (unary[gidx, cidx] - np.einsum("gc,gck->gk", p, unary)).sum(axis=0)
        g_pair = None
        if pair_model:
            g_pair = (pair[gidx, cidx] - np.einsum("gc,gckl->gkl", p, pair)).sum(axis=0)
        _stat_gradient(model, rl, g_item, g_pair, grads)
    return grads


def pl_objective(model: LogLinearModel, data: Dataset, structure: str, delta: int, reg: RegWeights) -> float:
    return pseudo_likelihood(model, data, structure, delta) - penalty(model, reg)


def pl_objective_gradient(model: LogLinearModel, data: Dataset, structure: str, delta: int, reg: RegWeights):
    grads = pseudo_likelihood_gradient(model, data, structure, delta)
    return [g - 2.0 * r * p for g, r, p in zip(grads, (reg.alpha, reg.beta), params_of(model))]


def pl_train(
    kind: str,
    data: Dataset,
    hyper: LoglinHyper = LoglinHyper(),
    init: LogLinearModel | None = None,
) -> tuple[LogLinearModel, list[float]]:
    """Full-batch backtracking ascent on the regularized pseudo-likelihood.

    Returns the model and the objective trace (initial value first).
    """
    model = init if init is not None else init_model(kind, data, hyper)
    structure, delta, reg = hyper.structure, hyper.delta, hyper.reg

    def value(params):
        try:
            return pl_objective(with_params(model, params), data, structure, delta, reg)
        except ValueError:
            return -math.inf

    current = pl_objective(model, data, structure, delta, reg)
    trace = [current]
    params = params_of(model)
    step = StepSize(Schedule(step=hyper.step))
    for epoch in range(hyper.epochs):
        grads = pl_objective_gradient(with_params(model, params), data, structure, delta, reg)
        params, current, eta = ascent_step(
            value, params, grads, current, step.eta, hyper.max_halvings, where="pseudo-likelihood", epoch=epoch
        )
        trace.append(current)
        step.update(eta)
        if eta is None:
            break
    return with_params(model, params), trace
