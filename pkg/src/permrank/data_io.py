"""Reading and writing rankings, ratings and model files; synthetic data.

Rankings file: one ``user<TAB>item,item,...`` record per line, ``#`` comments
and blank lines ignored. A comment of the form ``# users=N items=M`` fixes
the universe sizes (otherwise they are inferred).

Id mapping: when every user token and every item token is a non-negative
decimal integer, tokens are used as indices directly. Otherwise tokens are
numbered in order of first appearance, so re-parsing the same file always
yields the same map.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .core import Dataset, FactorPair, RankedList, ValidationError, validate_ranked_list

FORMAT_TAG = "PERMRANK-MODEL"
FORMAT_VERSION = 1
MODEL_KINDS = ("pairwise-baseline", "factored-pl", "latent-pl", "loglin-positional", "loglin-pairwise")

_SIZE_DIRECTIVE = re.compile(r"^#\s*users=(\d+)\s+items=(\d+)\s*$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ModelFormatError(ValueError):
    pass


class _IdMap:
    def __init__(self, numeric: bool):
        self.numeric = numeric
        self.index: dict[str, int] = {}
        self.labels: list[str] = []

    def get(self, token: str) -> int:
        if self.numeric:
            return int(token)
        if token not in self.index:
            self.index[token] = len(self.labels)
            self.labels.append(token)
        return self.index[token]


def _all_numeric(tokens: Iterable[str]) -> bool:
    return all(t.isdigit() and t.isascii() for t in tokens)


def _build_dataset(records, sizes, line_of) -> Dataset:
    users_numeric = _all_numeric(r[0] for r in records)
    items_numeric = _all_numeric(t for r in records for t in r[1])
    umap, imap = _IdMap(users_numeric), _IdMap(items_numeric)
    raw = [(umap.get(u), [imap.get(t) for t in items]) for u, items in records]

    if sizes is not None:
        N, M = sizes
    else:
        N = (max((u for u, _ in raw), default=-1) + 1) if users_numeric else len(umap.labels)
        M = (max((y for _, ys in raw for y in ys), default=-1) + 1) if items_numeric else len(imap.labels)

    if not users_numeric:
        N = max(N, len(umap.labels))
    if not items_numeric:
        M = max(M, len(imap.labels))
    user_labels = tuple(umap.labels) + tuple(f"~{u}" for u in range(len(umap.labels), N)) if not users_numeric else ()
    item_labels = tuple(imap.labels) + tuple(f"~{y}" for y in range(len(imap.labels), M)) if not items_numeric else ()

    lists = []
    seen_users = {}
    for k, (u, items) in enumerate(raw):
        lineno = line_of[k]
        if u >= N:
            raise ValidationError(f"line {lineno}: user {records[k][0]} outside declared N={N}")
        if u in seen_users:
            raise ValidationError(f"line {lineno}: user {records[k][0]} already has a list (line {seen_users[u]})")
        seen_users[u] = lineno
        bad = validate_ranked_list(items, M)
        if bad is not None:
            raise ValidationError(f"line {lineno}: {bad}")
        lists.append(RankedList(u, tuple(items)))
    return Dataset(N, M, tuple(lists), user_labels, item_labels)


def parse_rankings(stream: IO[str] | str) -> Dataset:
    """Parse a rankings file (or string) into a validated :class:`Dataset`."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records, line_of = [], []
    sizes = None
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            m = _SIZE_DIRECTIVE.match(line.strip())
            if m:
                sizes = (int(m.group(1)), int(m.group(2)))
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip():
            raise ParseError("expected 'user<TAB>item,item,...'", lineno)
        items = [t.strip() for t in parts[1].split(",")]
        if not items or any(not t for t in items):
            raise ParseError("empty item token", lineno)
        records.append((parts[0].strip(), items))
        line_of.append(lineno)
    return _build_dataset(records, sizes, line_of)


def format_rankings(data: Dataset) -> str:
    out = [f"# users={data.num_users} items={data.num_items}\n"]
    for rl in data.lists:
        out.append(data.user_labels[rl.user] + "\t" + ",".join(data.item_labels[y] for y in rl.items) + "\n")
    return "".join(out)


def write_rankings(data: Dataset, stream: IO[str]) -> None:
    stream.write(format_rankings(data))


def parse_ratings(stream: IO[str] | str) -> list[tuple[str, str, float]]:
    """Read ``user<TAB>item<TAB>rating`` lines."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    triples = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected 'user<TAB>item<TAB>rating'", lineno)
        try:
            r = float(parts[2])
        except ValueError:
            raise ParseError(f"bad rating {parts[2]!r}", lineno) from None
        if not math.isfinite(r):
            raise ParseError("rating must be finite", lineno)
        triples.append((parts[0].strip(), parts[1].strip(), r))
    return triples


def ratings_to_rankings(triples: Iterable[tuple]) -> Dataset:
    """Per user, sort items by rating (descending), ties by item index."""
    triples = list(triples)
    tokens_u = [str(t[0]) for t in triples]
    tokens_i = [str(t[1]) for t in triples]
    umap, imap = _IdMap(_all_numeric(tokens_u)), _IdMap(_all_numeric(tokens_i))
    per_user: dict[int, dict[int, float]] = {}
    for tu, ti, (_, _, r) in zip(tokens_u, tokens_i, triples):
        r = float(r)
        if not math.isfinite(r):
            raise ValidationError(f"non-finite rating for ({tu}, {ti})")
        u, y = umap.get(tu), imap.get(ti)
        row = per_user.setdefault(u, {})
        if y in row:
            raise ValidationError(f"duplicate rating for user {tu}, item {ti}")
        row[y] = r
    lists = [RankedList(u, tuple(sorted(row, key=lambda y: (-row[y], y)))) for u, row in per_user.items()]
    N = (max(per_user, default=-1) + 1) if umap.numeric else len(umap.labels)
    M = (max((y for row in per_user.values() for y in row), default=-1) + 1) if imap.numeric else len(imap.labels)
    return Dataset(N, M, tuple(lists), tuple(umap.labels), tuple(imap.labels))


def sample_pl_permutation(scores: Sequence[float], length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the first ``length`` stages of a Plackett-Luce ordering.

    Returns indices into ``scores``. Uses the Gumbel-max construction: the
    items sorted by ``score + Gumbel noise`` are distributed exactly as the
    stage-wise choice process. One Gumbel draw per scored item, always, so
    output is a fixed function of the generator state.
    """
    s = np.asarray(scores, dtype=float)
    if length < 0 or length > s.size:
        raise ValueError(f"cannot draw {length} items from a pool of {s.size}")
    keys = s + rng.gumbel(size=s.size)
    order = np.argsort(-keys, kind="stable")
    return order[:length]


@dataclass(frozen=True)
class SynthSpec:
    num_users: int
    num_items: int
    K: int
    n_min: int
    n_max: int
    scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("need at least one user and one item")
        if not 1 <= self.K <= min(self.num_users, self.num_items):
            raise ValueError(f"K={self.K} must lie in [1, min(N, M)]")
        if not 1 <= self.n_min <= self.n_max <= self.num_items:
            raise ValueError("need 1 <= n_min <= n_max <= M")
        if not (math.isfinite(self.scale) and self.scale >= 0):
            raise ValueError("score scale must be finite and non-negative")


def generate_synthetic(spec: SynthSpec) -> tuple[Dataset, FactorPair]:
    """Sample ground-truth factors and one Plackett-Luce list per user.

    ``W`` and ``H`` entries are standard normal times ``sqrt(scale) / K**0.25``
    so every true score has standard deviation ``scale``. Each user ranks a
    uniformly drawn item subset of uniformly drawn size in ``[n_min, n_max]``.
    """
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    factor_seq, *user_seqs = root.spawn(1 + spec.num_users)
    frng = np.random.default_rng(factor_seq)
    c = math.sqrt(spec.scale) / spec.K ** 0.25
    W = c * frng.standard_normal((spec.num_users, spec.K))
    H = c * frng.standard_normal((spec.K, spec.num_items))
    truth = FactorPair(W, H)
    lists = []
    for u, seq in enumerate(user_seqs):
        rng = np.random.default_rng(seq)
        n = int(rng.integers(spec.n_min, spec.n_max + 1))
        pool = rng.choice(spec.num_items, size=n, replace=False)
        order = sample_pl_permutation(truth.W[u] @ truth.H[:, pool], n, rng)
        lists.append(RankedList(u, tuple(int(pool[k]) for k in order)))
    return Dataset(spec.num_users, spec.num_items, tuple(lists)), truth


# ---------------------------------------------------------------------------
# model files

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _rows(a: np.ndarray) -> list[str]:
    a = np.atleast_2d(a)
    return [" ".join(_fmt(v) for v in row) for row in a]


def _kind_of(model) -> str:
    from .factored_pl import FplModel
    from .latent_pl import MixtureModel
    from .loglinear.models import PairwiseModel, PositionalModel

    if isinstance(model, FplModel):
        return "factored-pl"
    if isinstance(model, MixtureModel):
        return "latent-pl"
    if isinstance(model, PositionalModel):
        return "loglin-positional"
    if isinstance(model, PairwiseModel):
        return "loglin-pairwise"
    if isinstance(model, FactorPair):
        return "pairwise-baseline"
    raise TypeError(f"cannot serialize {type(model).__name__}")


def format_model(model) -> str:
    """Model file text. Row-major parameter blocks, one matrix row per line."""
    kind = _kind_of(model)
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION} {kind}"]
    if kind == "pairwise-baseline":
        f = model
        lines.append(f"{f.num_users} {f.num_items} {f.K}")
        lines += _rows(f.W) + _rows(f.H)
    elif kind == "factored-pl":
        f = model.factors
        lines.append(
            f"{f.num_users} {f.num_items} {f.K} damping={model.damping.rule} "
            f"alpha={_fmt(model.reg.alpha)} beta={_fmt(model.reg.beta)}"
        )
        lines += _rows(f.W) + _rows(f.H)
    elif kind == "latent-pl":
        N, K = model.mixture.shape
        lines.append(f"{N} {model.community_scores.shape[1]} {K}")
        lines += _rows(model.mixture) + _rows(model.community_scores)
    elif kind == "loglin-positional":
        f = model.factors
        lines.append(f"{f.num_users} {f.num_items} {f.K}")
        lines += _rows(f.W) + _rows(f.H)
    else:
        lines.append(f"{model.num_items} {len(model.pairs)} {model.tau}")
        lines.append(" ".join(_fmt(v) for v in model.gamma))
        lines += [f"{a} {b} {_fmt(v)}" for (a, b), v in zip(model.pairs, model.lam)]
    return "\n".join(lines) + "\n"


def write_model(model, stream: IO[str]) -> None:
    stream.write(format_model(model))


def _floats(tokens: list[str], where: str) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ModelFormatError(f"bad number in {where}") from None


def _matrix(lines: list[str], start: int, rows: int, cols: int, where: str) -> np.ndarray:
    if start + rows > len(lines):
        raise ModelFormatError(f"truncated file: {where} needs {rows} rows")
    out = np.empty((rows, cols))
    for r in range(rows):
        vals = _floats(lines[start + r].split(), where)
        if len(vals) != cols:
            raise ModelFormatError(f"{where} row {r}: expected {cols} values, got {len(vals)}")
        out[r] = vals
    return out


def read_model(stream: IO[str] | str, expected_kind: str | None = None):
    """Parse a model file. Raises :class:`ModelFormatError` on any defect."""
    text = stream if isinstance(stream, str) else stream.read()
    try:
        return _parse_model(text, expected_kind)
    except ModelFormatError:
        raise
    except ValueError as e:  # parameters that parse but violate a model invariant
        raise ModelFormatError(str(e)) from None


def _parse_model(text: str, expected_kind: str | None):
    from .factored_pl import DampingSchedule, FplModel
    from .latent_pl import MixtureModel
    from .loglinear.models import PairwiseModel, PositionalModel
    from .pairwise import RegWeights

    if not text.endswith("\n"):
        raise ModelFormatError("truncated file: missing final newline")
    lines = text.split("\n")[:-1]
    if len(lines) < 2:
        raise ModelFormatError("truncated file: missing header")
    head = lines[0].split()
    if len(head) != 3 or head[0] != FORMAT_TAG:
        raise ModelFormatError("not a permrank model file")
    if head[1] != str(FORMAT_VERSION):
        raise ModelFormatError(f"unsupported format version {head[1]}")
    kind = head[2]
    if kind not in MODEL_KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ModelFormatError(f"expected a {expected_kind} model, found {kind}")
    dims = lines[1].split()
    body = lines[2:]
    try:
        if kind in ("pairwise-baseline", "factored-pl", "loglin-positional", "latent-pl"):
            N, M, K = (int(t) for t in dims[:3])
    except ValueError:
        raise ModelFormatError("bad dimension line") from None

    def expect_len(n):
        if len(body) != n:
            raise ModelFormatError(f"expected {n} parameter lines, found {len(body)}")

    if kind in ("pairwise-baseline", "factored-pl", "loglin-positional"):
        expect_len(N + K)
        factors = FactorPair(_matrix(body, 0, N, K, "W"), _matrix(body, N, K, M, "H"))
        if kind == "pairwise-baseline":
            return factors
        if kind == "loglin-positional":
            return PositionalModel(factors)
        opts = dict(t.split("=", 1) for t in dims[3:] if "=" in t)
        try:
            damping = DampingSchedule(opts.get("damping", "none"))
            reg = RegWeights(float(opts.get("alpha", 0.0)), float(opts.get("beta", 0.0)))
        except ValueError as e:
            raise ModelFormatError(str(e)) from None
        return FplModel(factors, damping, reg)
    if kind == "latent-pl":
        expect_len(N + K)
        return MixtureModel(_matrix(body, 0, N, K, "mixture"), _matrix(body, N, K, M, "community scores"))

    try:
        M, P, tau = (int(t) for t in dims)
    except ValueError:
        raise ModelFormatError("bad dimension line") from None
    expect_len(1 + P)
    gamma = _matrix(body, 0, 1, M, "gamma")[0]
    pairs, lam = [], []
    for r in range(P):
        tok = body[1 + r].split()
        if len(tok) != 3:
            raise ModelFormatError(f"lambda line {r}: expected 'item item value'")
        try:
            pairs.append((int(tok[0]), int(tok[1])))
        except ValueError:
            raise ModelFormatError(f"lambda line {r}: bad item index") from None
        lam.append(_floats(tok[2:], "lambda")[0])
    return PairwiseModel(M, gamma, tuple(pairs), np.array(lam), tau)
