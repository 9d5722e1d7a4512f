"""Energy-based insertion of unseen items."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..factored_pl import sort_by_score
from .models import BoundEnergy, LogLinearModel, PositionalModel


def insertion_energies(model: LogLinearModel, user: int, seen: Sequence[int], item: int) -> np.ndarray:
    """Energy of the extended list for every insertion slot of ``item``.

    The new item starts at the front (one full energy evaluation) and walks
    right, each step adding one adjacent-swap delta.
    """
    seen = [int(y) for y in seen]
    if item in seen:
        raise ValueError(f"item {item} is already in the list")
    bound = BoundEnergy(model, user)
    n = len(seen) + 1
    g = bound.g(n)
    e = np.empty(n)
    e[0] = bound.energy([item] + seen)
    for j in range(n - 1):
        e[j + 1] = e[j] + bound.delta_adjacent(item, seen[j], j, g)
    return e


def predict_insert(model: LogLinearModel, user: int, seen: Sequence[int], item: int) -> int:
    """Lowest-energy 0-based insertion position; ties go to the earliest slot."""
    return int(np.argmin(insertion_energies(model, user, seen, item)))


def rank_unseen(model: LogLinearModel, user: int, seen: Sequence[int], candidates: Sequence[int]) -> list[int]:
    """Candidates by best slot, then by that slot's energy, then by item index."""
    keyed = []
    for y in candidates:
        e = insertion_energies(model, user, seen, int(y))
        j = int(np.argmin(e))
        keyed.append((j, float(e[j]), int(y)))
    return [y for _, _, y in sorted(keyed)]


def predict_order(model: LogLinearModel, user: int, seen: Sequence[int], candidates: Sequence[int]) -> list[int]:
    """Positional models sort by score; pairwise models rank by insertion."""
    if isinstance(model, PositionalModel):
        theta = BoundEnergy(model, user).theta
        cand = [int(y) for y in candidates]
        return sort_by_score(cand, [theta[y] for y in cand])
    return rank_unseen(model, user, seen, candidates)
