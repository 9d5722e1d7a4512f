"""Brute-force distributions over small permutation spaces and ranking metrics."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import factored_pl, latent_pl
from .core import RankedList
from .loglinear.models import BoundEnergy, PairwiseModel, PositionalModel

MAX_EXACT = 8


def enumerate_orderings(items: Sequence[int]) -> list[tuple[int, ...]]:
    """All ``n!`` orderings of ``items`` in lexicographic order (``n <= 8``)."""
    items = sorted(int(y) for y in items)
    if len(set(items)) != len(items):
        raise ValueError("items must be distinct")
    if len(items) > MAX_EXACT:
        raise ValueError(f"refusing to enumerate {len(items)}! orderings (limit n <= {MAX_EXACT})")
    return list(itertools.permutations(items))


@dataclass(frozen=True)
class ExactDistribution:
    orderings: tuple[tuple[int, ...], ...]
    probs: np.ndarray

    def prob(self, ordering: Sequence[int]) -> float:
        return float(self.probs[self.index[tuple(ordering)]])

    @property
    def index(self) -> dict[tuple[int, ...], int]:
        return {o: k for k, o in enumerate(self.orderings)}


def model_log_weight(model, user: int, ordering: Sequence[int]) -> float:
    """Log of the model's (possibly unnormalized) weight on one ordering."""
    rl = RankedList(user, tuple(ordering))
    if isinstance(model, factored_pl.FplModel):
        return factored_pl.log_likelihood(model, rl)
    if isinstance(model, latent_pl.MixtureModel):
        return latent_pl.log_likelihood(model, rl)
    if isinstance(model, (PositionalModel, PairwiseModel)):
        return -BoundEnergy(model, user).energy(list(ordering))
    raise TypeError(f"{type(model).__name__} does not define a distribution over orderings")


def exact_distribution(model, user: int, items: Sequence[int]) -> ExactDistribution:
    """Plackett-Luce kinds: their own product formula per ordering.
    Log-linear kinds: ``exp(-E) / Z`` with ``Z`` by enumeration."""
    orders = enumerate_orderings(items)
    logw = np.array([model_log_weight(model, user, o) for o in orders])
    if isinstance(model, (PositionalModel, PairwiseModel)):
        logw = logw - logsumexp(logw)
    return ExactDistribution(tuple(orders), np.exp(logw))


def kendall_tau(a: Sequence[int], b: Sequence[int]) -> float:
    """``(concordant - discordant) / C(n, 2)`` for two orderings of one item set."""
    a, b = list(a), list(b)
    if len(a) != len(b) or set(a) != set(b) or len(set(a)) != len(a):
        raise ValueError("kendall_tau needs two orderings of the same item set")
    n = len(a)
    if n < 2:
        raise ValueError("kendall_tau needs at least two items")
    rank_b = {y: i for i, y in enumerate(b)}
    r = np.array([rank_b[y] for y in a])
    s = np.sign(r[None, :] - r[:, None])[np.triu_indices(n, k=1)]
    return float(s.sum()) / (n * (n - 1) / 2)


def ndcg_at_k(predicted: Sequence[int], held_out: Sequence[int], k: int) -> float:
    """NDCG@k with relevance ``n_held - position`` (1-based position in
    ``held_out``), linear gains and ``log2(rank + 1)`` discounts. Items not in
    ``held_out`` have relevance 0. Returns 1 when the ideal DCG is 0."""
    if k < 1:
        raise ValueError("k must be at least 1")
    n = len(held_out)
    rel = {y: n - p for p, y in enumerate(held_out, start=1)}
    disc = 1.0 / np.log2(np.arange(2, k + 2))
    gains = np.array([rel.get(y, 0) for y in list(predicted)[:k]], dtype=float)
    ideal = np.sort(np.array(list(rel.values()), dtype=float))[::-1][:k]
    idcg = float(ideal @ disc[: ideal.size])
    if idcg == 0:
        return 1.0
    return float(gains @ disc[: gains.size]) / idcg


def tv_distance(counts: Mapping[tuple[int, ...], float], exact: ExactDistribution) -> float:
    """Half the L1 distance between normalized ``counts`` and ``exact``."""
    index = exact.index
    emp = np.zeros(len(exact.orderings))
    for o, c in counts.items():
        o = tuple(o)
        if o not in index:
            raise ValueError(f"ordering {o} is outside the exact distribution's support")
        emp[index[o]] += c
    total = emp.sum()
    if total <= 0:
        raise ValueError("empty counts")
    return 0.5 * float(np.abs(emp / total - exact.probs).sum())


@dataclass
class EvalReport:
    users: list[str] = field(default_factory=list)
    taus: list[float] = field(default_factory=list)
    ndcgs: list[float] = field(default_factory=list)
    loglik: list[float | None] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    k: int = 10

    def add(self, user: str, tau: float, ndcg: float, ll: float | None) -> None:
        if not -1.0 - 1e-12 <= tau <= 1.0 + 1e-12 or not 0.0 <= ndcg <= 1.0 + 1e-12:
            raise ValueError("metric out of range")
        self.users.append(user)
        self.taus.append(tau)
        self.ndcgs.append(ndcg)
        self.loglik.append(ll)

    @property
    def mean_tau(self) -> float:
        return float(np.mean(self.taus)) if self.taus else math.nan

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean(self.ndcgs)) if self.ndcgs else math.nan

    @property
    def mean_loglik(self) -> float | None:
        vals = [v for v in self.loglik if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_text(self) -> str:
        ll = self.mean_loglik
        return (
            f"users_evaluated\t{len(self.users)}\n"
            f"users_skipped\t{len(self.skipped)}\n"
            f"mean_kendall_tau\t{self.mean_tau:.6f}\n"
            f"mean_ndcg@{self.k}\t{self.mean_ndcg:.6f}\n"
            f"mean_heldout_loglik\t{'NA' if ll is None else f'{ll:.6f}'}\n"
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", "kendall_tau", f"ndcg@{self.k}", "heldout_loglik"])
        for u, t, d, ll in zip(self.users, self.taus, self.ndcgs, self.loglik):
            w.writerow([u, f"{t:.6f}", f"{d:.6f}", "NA" if ll is None else f"{ll:.6f}"])
        for u in self.skipped:
            w.writerow([u, "skipped", "skipped", "skipped"])
        return buf.getvalue()
