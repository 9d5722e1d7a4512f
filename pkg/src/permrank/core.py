"""Shared domain types and score arithmetic.

Positions are 0-based everywhere in code. A ranked list ``items`` holds the
most preferred item at ``items[0]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input data violates a domain invariant."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite objective or parameter."""

    def __init__(self, message: str, step: int | None = None, phase: str | None = None):
        super().__init__(message)
        self.step = step
        self.phase = phase


@dataclass(frozen=True)
class RankedList:
    user: int
    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(y) for y in self.items))
        if not self.items:
            raise ValidationError(f"user {self.user}: empty ranked list")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Violation:
    """First offending entry of a ranked list (``position`` is 1-based)."""

    kind: str  # "duplicate" | "out-of-range"
    position: int
    item: int

    def __str__(self) -> str:
        return f"{self.kind} item {self.item} at position {self.position}"


def validate_ranked_list(items: Sequence[int], num_items: int) -> Violation | None:
    """Return ``None`` if ``items`` is a valid partial permutation of
    ``range(num_items)``, else the first violation found."""
    seen = set()
    for pos, y in enumerate(items, start=1):
        if y < 0 or y >= num_items:
            return Violation("out-of-range", pos, int(y))
        if y in seen:
            return Violation("duplicate", pos, int(y))
        seen.add(y)
    return None


@dataclass(frozen=True)
class Dataset:
    """Sparse ranked lists over ``num_users`` users and ``num_items`` items.

    ``user_labels`` / ``item_labels`` map dense indices back to the external
    tokens they were parsed from.
    """

    num_users: int
    num_items: int
    lists: tuple[RankedList, ...]
    user_labels: tuple[str, ...] = ()
    item_labels: tuple[str, ...] = ()
    _by_user: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        lists = tuple(sorted(self.lists, key=lambda r: r.user))
        object.__setattr__(self, "lists", lists)
        if not self.user_labels:
            object.__setattr__(self, "user_labels", tuple(str(u) for u in range(self.num_users)))
        if not self.item_labels:
            object.__setattr__(self, "item_labels", tuple(str(y) for y in range(self.num_items)))
        if len(self.user_labels) != self.num_users or len(self.item_labels) != self.num_items:
            raise ValidationError("label tables do not match dataset dimensions")
        by_user = {}
        for rl in lists:
            if not 0 <= rl.user < self.num_users:
                raise ValidationError(f"user {rl.user} out of range (N={self.num_users})")
            if rl.user in by_user:
                raise ValidationError(f"user {rl.user} has more than one list")
            bad = validate_ranked_list(rl.items, self.num_items)
            if bad is not None:
                raise ValidationError(f"user {self.user_labels[rl.user]}: {bad}")
            by_user[rl.user] = rl
        object.__setattr__(self, "_by_user", by_user)

    def list_for(self, user: int) -> RankedList:
        try:
            return self._by_user[user]
        except KeyError:
            raise KeyError(f"no ranked list for user {user}") from None

    def has_user(self, user: int) -> bool:
        return user in self._by_user

    def __iter__(self):
        return iter(self.lists)

    def __len__(self) -> int:
        return len(self.lists)


@dataclass(frozen=True, eq=False)
class FactorPair:
    """Score factors: ``scores[u, y] = W[u] @ H[:, y]``."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        H = np.array(self.H, dtype=float)
        if W.ndim != 2 or H.ndim != 2 or W.shape[1] != H.shape[0]:
            raise ValueError(f"incompatible factor shapes {W.shape} and {H.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(H))):
            raise ValueError("factor entries must be finite")
        W.flags.writeable = False
        H.flags.writeable = False
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "H", H)

    @property
    def num_users(self) -> int:
        return self.W.shape[0]

    @property
    def num_items(self) -> int:
        return self.H.shape[1]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FactorPair):
            return NotImplemented
        return np.array_equal(self.W, other.W) and np.array_equal(self.H, other.H)


def user_scores(factors: FactorPair, user: int, items: Iterable[int] | None = None) -> np.ndarray:
    """Scores ``s_y^u`` of ``user`` for ``items`` (all items when omitted)."""
    if not 0 <= user < factors.num_users:
        raise IndexError(f"user {user} out of range (N={factors.num_users})")
    if items is None:
        return factors.W[user] @ factors.H
    idx = np.asarray(list(items), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= factors.num_items):
        raise IndexError(f"item index out of range (M={factors.num_items})")
    return factors.W[user] @ factors.H[:, idx]


def suffix_log_denominators(scores: Sequence[float]) -> np.ndarray:
    """``out[i] = log(sum(exp(scores[i:])))`` in one right-to-left pass."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("suffix_log_denominators needs a non-empty 1-d score sequence")
    return np.logaddexp.accumulate(s[::-1])[::-1]


def suffix_log_denominators_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise :func:`suffix_log_denominators` for a 2-d array."""
    s = np.asarray(scores, dtype=float)
    return np.logaddexp.accumulate(s[:, ::-1], axis=1)[:, ::-1]


def init_uniform(rng: np.random.Generator, shape, width: float = 0.01) -> np.ndarray:
    return rng.uniform(-width, width, size=shape)


def init_factors(num_users: int, num_items: int, K: int, rng: np.random.Generator) -> FactorPair:
    if K < 1 or K > min(num_users, num_items):
        raise ValueError(f"K={K} must lie in [1, min(N, M)] = [1, {min(num_users, num_items)}]")
    W = init_uniform(rng, (num_users, K))
    H = init_uniform(rng, (K, num_items))
    return FactorPair(W, H)
