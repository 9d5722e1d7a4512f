"""Metropolis-Hastings over orderings with symmetric local proposals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import BoundEnergy, LogLinearModel, Move, Relocate, SublistPerm, Swap, apply_move

REVALIDATE_EVERY = 10_000
DRIFT_TOL = 1e-9

Proposal = Callable[[np.random.Generator, int], "Move | None"]


def propose_swap(rng: np.random.Generator, n: int) -> Swap | None:
    """Uniform over unordered position pairs."""
    if n < 2:
        return None
    l = int(rng.integers(n))
    m = int(rng.integers(n - 1))
    m += m >= l
    return Swap(min(l, m), max(l, m))


def propose_relocate(rng: np.random.Generator, n: int) -> Relocate | None:
    """Uniform over ordered (source, destination) pairs with source != destination."""
    if n < 2:
        return None
    src = int(rng.integers(n))
    dst = int(rng.integers(n - 1))
    dst += dst >= src
    return Relocate(src, dst)


def sublist_proposal(width: int = 3) -> Proposal:
    """Uniform window start and uniform reordering of the window.

    The inverse reordering is drawn with the same probability, so the
    proposal is symmetric. Lists shorter than ``width`` use their full length.
    """
    def propose(rng: np.random.Generator, n: int) -> SublistPerm | None:
        w = min(width, n)
        if w < 2:
            return None
        start = int(rng.integers(n - w + 1))
        return SublistPerm(start, tuple(int(k) for k in rng.permutation(w)))
    return propose


def mixed_proposal(weights: Sequence[float] = (0.7, 0.2, 0.1), width: int = 3) -> Proposal:
    """Swap / relocate / sublist mixture; a mixture of symmetric kernels is symmetric."""
    parts = (propose_swap, propose_relocate, sublist_proposal(width))
    cdf = np.cumsum(np.asarray(weights, dtype=float) / np.sum(weights)).tolist()

    def propose(rng: np.random.Generator, n: int):
        r = rng.random()
        for c, p in zip(cdf, parts):
            if r < c:
                return p(rng, n)
        return parts[-1](rng, n)
    return propose


def acceptance_probability(delta: float) -> float:
    """``min(1, exp(-delta))``."""
    return 1.0 if delta <= 0 else math.exp(-delta)


@dataclass
class ChainState:
    perm: list[int]
    energy: float
    bound: BoundEnergy = field(repr=False)
    accepted: int = 0
    proposed: int = 0
    _since_check: int = field(default=0, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def start_chain(model: LogLinearModel, user: int, items: Sequence[int]) -> ChainState:
    bound = BoundEnergy(model, user)
    perm = [int(y) for y in items]
    return ChainState(perm, bound.energy(perm), bound)


def metropolis_step(state: ChainState, proposal: Proposal, rng: np.random.Generator) -> bool:
    """Propose, accept with ``min(1, exp(-dE))``, update in place. Returns the accept flag."""
    move = proposal(rng, len(state.perm))
    state.proposed += 1
    if move is None:
        return False
    d = state.bound.delta(state.perm, move)
    if d > 0 and rng.random() >= math.exp(-d):
        return False
    state.perm = apply_move(state.perm, move)
    state.energy += d
    state.accepted += 1
    state._since_check += 1
    if state._since_check >= REVALIDATE_EVERY:
        state._since_check = 0
        exact = state.bound.energy(state.perm)
        if abs(exact - state.energy) > DRIFT_TOL * max(1.0, abs(exact)):
            raise RuntimeError(f"cached energy drifted: {state.energy} vs {exact}")
        state.energy = exact
    return True


def run_chain(
    state: ChainState,
    proposal: Proposal,
    steps: int,
    rng: np.random.Generator,
    burn_in: int = 0,
    record: Callable[[list[int]], None] | None = None,
) -> ChainState:
    """Advance ``burn_in + steps`` steps, calling ``record`` after each retained step."""
    for _ in range(burn_in):
        metropolis_step(state, proposal, rng)
    for _ in range(steps):
        metropolis_step(state, proposal, rng)
        if record is not None:
            record(state.perm)
    return state
