"""Log-linear permutation models, local moves and energy bookkeeping.

Both parameterisations share one energy shape over a list ``perm``::

    E(perm) = -sum_i theta[perm[i]] * g(i, n) - sum_{i<j} lam[perm[i], perm[j]]

``theta`` is the user's factored score row for :class:`PositionalModel`
(no pair term, ``g = (n - 1 - 2i) / n`` with 0-based ``i``) and the shared
per-item ``gamma`` for :class:`PairwiseModel` (``g = 1 - (i + 1) / n``).
Lower energy means a more probable ordering.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from ..core import Dataset, FactorPair


def positional_weights(n: int) -> np.ndarray:
    """``(1 + n - 2i) / n`` for 1-based ``i``; strictly decreasing, sums to 0."""
    i = np.arange(1, n + 1, dtype=float)
    return (1.0 + n - 2.0 * i) / n


def pairwise_weights(n: int) -> np.ndarray:
    """``1 - i / n`` for 1-based ``i``."""
    return 1.0 - np.arange(1, n + 1, dtype=float) / n


@dataclass(frozen=True, eq=False)
class PositionalModel:
    factors: FactorPair

    weights = staticmethod(positional_weights)

    @property
    def num_items(self) -> int:
        return self.factors.num_items

    def __eq__(self, other):
        return isinstance(other, PositionalModel) and self.factors == other.factors


@dataclass(frozen=True, eq=False)
class PairwiseModel:
    """Per-item ``gamma`` plus asymmetric ``lam`` on retained ordered pairs.

    ``pairs[k] = (y, y2)`` holds ``lam[k]``, the reward for ranking ``y``
    anywhere above ``y2``. Pairs absent from the table contribute nothing.
    """

    num_items: int
    gamma: np.ndarray
    pairs: tuple[tuple[int, int], ...] = ()
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau: int = 5

    weights = staticmethod(pairwise_weights)

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float)
        lam = np.array(self.lam, dtype=float).reshape(-1)
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        if gamma.shape != (self.num_items,):
            raise ValueError(f"gamma must have length {self.num_items}")
        if lam.shape != (len(pairs),):
            raise ValueError("lam must have one value per pair")
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate pair in lambda table")
        for a, b in pairs:
            if a == b or not (0 <= a < self.num_items and 0 <= b < self.num_items):
                raise ValueError(f"invalid pair ({a}, {b})")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(lam))):
            raise ValueError("parameters must be finite")
        gamma.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "pairs", pairs)

    @cached_property
    def pair_index(self) -> dict[tuple[int, int], int]:
        return {p: k for k, p in enumerate(self.pairs)}

    @cached_property
    def lam_dict(self) -> dict[tuple[int, int], float]:
        return {p: float(v) for p, v in zip(self.pairs, self.lam)}

    def with_params(self, gamma, lam) -> "PairwiseModel":
        return PairwiseModel(self.num_items, gamma, self.pairs, lam, self.tau)

    def __eq__(self, other):
        return (
            isinstance(other, PairwiseModel)
            and self.num_items == other.num_items
            and self.pairs == other.pairs
            and self.tau == other.tau
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.lam, other.lam)
        )


LogLinearModel = Union[PositionalModel, PairwiseModel]


def build_pairwise_params(data: Dataset, tau: int = 5) -> PairwiseModel:
    """Zero-initialised pairwise model keeping both orientations of every item
    pair that co-occurs in at least ``tau`` lists."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    counts: Counter = Counter()
    for rl in data.lists:
        items = sorted(rl.items)
        for i, a in enumerate(items):
            for b in items[i + 1:]:
                counts[a, b] += 1
    pairs = []
    for (a, b), c in sorted(counts.items()):
        if c >= tau:
            pairs += [(a, b), (b, a)]
    return PairwiseModel(data.num_items, np.zeros(data.num_items), tuple(pairs), np.zeros(len(pairs)), tau)


# ---------------------------------------------------------------------------
# moves (0-based positions)

@dataclass(frozen=True)
class Relocate:
    src: int
    dst: int


@dataclass(frozen=True)
class Swap:
    l: int
    m: int


@dataclass(frozen=True)
class SublistPerm:
    start: int
    order: tuple[int, ...]  # new window = [window[k] for k in order]

    @property
    def width(self) -> int:
        return len(self.order)


Move = Union[Relocate, Swap, SublistPerm]


def check_move(move: Move, n: int) -> None:
    if isinstance(move, Swap):
        if not 0 <= move.l < move.m < n:
            raise ValueError(f"invalid swap {move} for list of length {n}")
    elif isinstance(move, Relocate):
        if not (0 <= move.src < n and 0 <= move.dst < n):
            raise ValueError(f"invalid relocation {move} for list of length {n}")
    elif isinstance(move, SublistPerm):
        w = move.width
        if w < 2 or not 0 <= move.start <= n - w or sorted(move.order) != list(range(w)):
            raise ValueError(f"invalid sublist permutation {move} for list of length {n}")
    else:
        raise TypeError(f"not a move: {move!r}")


def apply_move(perm: Sequence[int], move: Move) -> list[int]:
    p = list(perm)
    check_move(move, len(p))
    if isinstance(move, Swap):
        p[move.l], p[move.m] = p[move.m], p[move.l]
    elif isinstance(move, Relocate):
        y = p.pop(move.src)
        p.insert(move.dst, y)
    else:
        s, w = move.start, move.width
        window = p[s:s + w]
        p[s:s + w] = [window[k] for k in move.order]
    return p


def inverse_move(move: Move) -> Move:
    if isinstance(move, Swap):
        return move
    if isinstance(move, Relocate):
        return Relocate(move.dst, move.src)
    inv = [0] * move.width
    for t, k in enumerate(move.order):
        inv[k] = t
    return SublistPerm(move.start, tuple(inv))


# ---------------------------------------------------------------------------
# energies

class BoundEnergy:
    """Energy of one user's orderings; parameters read into plain Python
    containers so per-move deltas stay cheap inside MCMC loops."""

    def __init__(self, model: LogLinearModel, user: int):
        self.model = model
        self.user = user
        if isinstance(model, PositionalModel):
            f = model.factors
            if not 0 <= user < f.num_users:
                raise KeyError(f"unknown user {user}")
            self.theta = (f.W[user] @ f.H).tolist()
            self.lam: dict = {}
        elif isinstance(model, PairwiseModel):
            self.theta = model.gamma.tolist()
            self.lam = model.lam_dict
        else:
            raise TypeError(f"not a log-linear model: {type(model).__name__}")
        self._weights = model.weights
        self._g: dict[int, list[float]] = {}

    def g(self, n: int) -> list[float]:
        w = self._g.get(n)
        if w is None:
            w = self._g[n] = self._weights(n).tolist()
        return w

    def pair(self, a: int, b: int) -> float:
        return self.lam.get((a, b), 0.0)

    def energy(self, perm: Sequence[int]) -> float:
        g = self.g(len(perm))
        th = self.theta
        e = -sum(th[y] * gi for y, gi in zip(perm, g))
        if self.lam:
            lam = self.lam
            for i, a in enumerate(perm):
                for b in perm[i + 1:]:
                    e -= lam.get((a, b), 0.0)
        return e

    def delta_adjacent(self, a: int, b: int, j: int, g: Sequence[float]) -> float:
        """Energy change when ``a`` at position ``j`` trades places with ``b`` at ``j + 1``."""
        d = (self.theta[a] - self.theta[b]) * (g[j] - g[j + 1])
        if self.lam:
            d += self.lam.get((a, b), 0.0) - self.lam.get((b, a), 0.0)
        return d

    def delta(self, perm: Sequence[int], move: Move) -> float:
        n = len(perm)
        g = self.g(n)
        th = self.theta
        lam = self.lam
        if isinstance(move, Swap):
            l, m = move.l, move.m
            a, b = perm[l], perm[m]
            d = (th[a] - th[b]) * (g[l] - g[m])
            if lam:
                get = lam.get
                d += get((a, b), 0.0) - get((b, a), 0.0)
                for c in perm[l + 1:m]:
                    d += get((a, c), 0.0) + get((c, b), 0.0) - get((b, c), 0.0) - get((c, a), 0.0)
            return d
        if isinstance(move, Relocate):
            src, dst = move.src, move.dst
            a = perm[src]
            if src < dst:
                span = perm[src + 1:dst + 1]
                # a moves to dst; span shifts one slot up
                d = th[a] * (g[src] - g[dst])
                d += sum(th[c] * (g[k] - g[k - 1]) for k, c in zip(range(src + 1, dst + 1), span))
                if lam:
                    d += sum(lam.get((a, c), 0.0) - lam.get((c, a), 0.0) for c in span)
            elif dst < src:
                span = perm[dst:src]
                d = th[a] * (g[src] - g[dst])
                d += sum(th[c] * (g[k] - g[k + 1]) for k, c in zip(range(dst, src), span))
                if lam:
                    d += sum(lam.get((c, a), 0.0) - lam.get((a, c), 0.0) for c in span)
            else:
                d = 0.0
            return d
        s, w = move.start, move.width
        old = perm[s:s + w]
        new = [old[k] for k in move.order]
        d = -sum((th[y1] - th[y0]) * g[s + t] for t, (y0, y1) in enumerate(zip(old, new)))
        if lam:
            get = lam.get
            for i in range(w):
                for j in range(i + 1, w):
                    d += get((old[i], old[j]), 0.0) - get((new[i], new[j]), 0.0)
        return d


def energy(model: LogLinearModel, items: Sequence[int], user: int = 0) -> float:
    return BoundEnergy(model, user).energy(list(items))


def delta_energy(model: LogLinearModel, items: Sequence[int], move: Move, user: int = 0) -> float:
    """``energy(apply_move(items, move)) - energy(items)`` without a full recount."""
    check_move(move, len(items))
    return BoundEnergy(model, user).delta(list(items), move)
