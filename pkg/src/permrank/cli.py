"""Command-line front end: ``permrank train|predict|evaluate|sample|synth``.

Settings resolve as built-in defaults < ``--config`` file (flat
``key = value`` lines) < command-line flags. Every command echoes its
resolved settings to stderr before running.

Exit codes: 0 success, 1 input/validation error, 2 numerical divergence,
3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from collections import Counter
from dataclasses import dataclass, fields
from typing import IO, Sequence

import numpy as np

from . import data_io, factored_pl, latent_pl, pairwise
from .core import Dataset, DivergenceError, FactorPair, RankedList, ValidationError
from .loglinear import learning as ll_learning
from .loglinear import mcmc
from .loglinear.models import PairwiseModel, PositionalModel
from .loglinear.predict import predict_order
from .loglinear.predict import rank_unseen as ll_rank_unseen
from .optim import Schedule
from .oracle import EvalReport, kendall_tau, ndcg_at_k

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    model: str = "factored-pl"  # kind for train; model file path for predict/evaluate/sample
    k: int = 5
    alpha: float = 0.01
    beta: float = 0.01
    tau: int = 5
    damping: str = "none"
    loss: str = "logistic"
    epochs: int = 100
    step: float = 0.1
    inner_steps: int = 3
    trainer: str = "cd"
    cd_steps: int = 0  # 0: chain length n_u
    structure: str = "relocation"
    delta: int = 3
    seed: int = 0
    split: float = 0.2
    ndcg_k: int = 10
    rank: str = "auto"
    input: str = ""
    out: str = ""
    candidates: str = ""
    user: str = ""
    steps: int = 1000
    burn_in: int = 0
    proposal: str = "mixed"
    users: int = 100
    items: int = 30
    n_min: int = 10
    n_max: int = 10
    scale: float = 1.0
    truth: str = ""
    figures: bool = True


COMMAND_KEYS = {
    "train": ["model", "input", "out", "k", "alpha", "beta", "tau", "damping", "loss", "epochs", "step",
              "inner_steps", "trainer", "cd_steps", "structure", "delta", "seed", "figures"],
    "predict": ["model", "input", "candidates", "rank", "out"],
    "evaluate": ["model", "input", "out", "split", "ndcg_k", "rank", "figures"],
    "sample": ["model", "input", "user", "steps", "burn_in", "proposal", "delta", "seed", "out", "figures"],
    "synth": ["users", "items", "k", "n_min", "n_max", "scale", "seed", "out", "truth"],
}

_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, value):
    typ = _FIELD_TYPES[key]
    if isinstance(value, typ):
        return value
    text = str(value).strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError:
        raise UsageError(f"{key}: cannot read {text!r} as {typ.__name__}") from None


def read_config_file(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "in":
                key = "input"
            if key not in _FIELD_TYPES or key == "command":
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve(command: str, flags: dict, config_path: str | None) -> RunConfig:
    cfg = RunConfig(command=command)
    if command == "synth":
        cfg.out = "synth.rankings"
    if config_path:
        cfg = dataclasses.replace(cfg, **read_config_file(config_path))
    cfg = dataclasses.replace(cfg, **{k: _coerce(k, v) for k, v in flags.items()})
    return cfg


def echo(cfg: RunConfig, stream: IO[str]) -> None:
    stream.write(f"# permrank {cfg.command}\n")
    for key in COMMAND_KEYS[cfg.command]:
        stream.write(f"# {key} = {getattr(cfg, key)}\n")


# ---------------------------------------------------------------------------
# helpers

def _read_dataset(path: str) -> Dataset:
    if not path:
        raise UsageError("--in is required")
    with open(path, encoding="utf-8") as fh:
        return data_io.parse_rankings(fh)


def _read_model(path: str):
    if not path:
        raise UsageError("--model (model file) is required")
    with open(path, encoding="utf-8") as fh:
        return data_io.read_model(fh)


def _write_text(path: str, text: str, stdout: IO[str]) -> None:
    if not path or path == "-":
        stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _user_index(data: Dataset, token: str) -> int:
    try:
        return data.user_labels.index(token)
    except ValueError:
        raise KeyError(f"unknown user {token!r}") from None


def _item_index(data: Dataset, token: str) -> int:
    try:
        return data.item_labels.index(token)
    except ValueError:
        raise KeyError(f"unknown item {token!r}") from None


def _check_model_fits(model, data: Dataset) -> None:
    if isinstance(model, FactorPair):
        N, M = model.num_users, model.num_items
    elif isinstance(model, (factored_pl.FplModel, PositionalModel)):
        N, M = model.factors.num_users, model.factors.num_items
    elif isinstance(model, latent_pl.MixtureModel):
        N, M = model.num_users, model.num_items
    else:
        N, M = data.num_users, model.num_items
    if N != data.num_users or M != data.num_items:
        raise ValidationError(
            f"model is {N} users x {M} items but the dataset is {data.num_users} x {data.num_items}"
        )


RANK_RULES = ("auto", "sort", "insertion")


def rank_candidates(model, user: int, seen: Sequence[int], candidates: Sequence[int], rule: str = "auto") -> list[int]:
    """Order ``candidates`` for ``user`` given the user's ``seen`` list.

    ``auto`` sorts by score for models with per-user scores (pairwise
    baseline, factored PL, positional) and inserts otherwise. ``insertion``
    places each candidate independently at its best slot in ``seen``.
    """
    if rule not in RANK_RULES:
        raise UsageError(f"unknown rank rule {rule!r}; choose from {', '.join(RANK_RULES)}")
    scored = isinstance(model, (FactorPair, factored_pl.FplModel))
    if rule == "sort" and not (scored or isinstance(model, PositionalModel)):
        raise UsageError("rank rule 'sort' needs a model with per-user item scores")
    if scored:
        if rule == "insertion":
            return factored_pl.rank_by_insertion(model, user, seen, candidates)
        return factored_pl.predict_sort(model, user, candidates)
    if isinstance(model, latent_pl.MixtureModel):
        return latent_pl.rank_unseen(model, user, seen, candidates)
    if rule == "insertion":
        return ll_rank_unseen(model, user, seen, candidates)
    return predict_order(model, user, seen, candidates)


def heldout_loglik(model, user: int, held: Sequence[int]) -> float | None:
    rl = RankedList(user, tuple(held))
    if isinstance(model, factored_pl.FplModel):
        return factored_pl.log_likelihood(model, rl)
    if isinstance(model, latent_pl.MixtureModel):
        return latent_pl.log_likelihood(model, rl)
    return None


# ---------------------------------------------------------------------------
# commands

def cmd_train(cfg: RunConfig, stdout: IO[str], stderr: IO[str]) -> int:
    data = _read_dataset(cfg.input)
    if not cfg.out:
        raise UsageError("--out (model file) is required")
    kind = cfg.model
    reg = pairwise.RegWeights(cfg.alpha, cfg.beta)
    schedule = Schedule(epochs=cfg.epochs, step=cfg.step, seed=cfg.seed, inner_steps=cfg.inner_steps)
    if kind == "pairwise-baseline":
        model, trace = pairwise.train_pairwise(data, cfg.k, cfg.loss, reg, schedule)
        label = "risk"
    elif kind == "factored-pl":
        model, trace = factored_pl.train_fpl(data, cfg.k, factored_pl.DampingSchedule(cfg.damping), reg, schedule)
        label = "regularized log-likelihood"
    elif kind == "latent-pl":
        model, trace = latent_pl.schedule_em(data, cfg.k, schedule)
        label = "log-likelihood"
    elif kind in ("loglin-positional", "loglin-pairwise"):
        hyper = ll_learning.LoglinHyper(
            epochs=cfg.epochs, step=cfg.step, seed=cfg.seed, K=cfg.k, tau=cfg.tau, reg=reg,
            chain_steps=cfg.cd_steps or None, structure=cfg.structure, delta=cfg.delta,
        )
        if cfg.trainer == "cd":
            model, trace = ll_learning.cd_train(kind, data, hyper)
            label = "energy gap (data - chain end)"
        elif cfg.trainer == "pl":
            model, trace = ll_learning.pl_train(kind, data, hyper)
            label = f"pseudo-likelihood ({cfg.structure})"
        else:
            raise UsageError(f"unknown trainer {cfg.trainer!r}; choose cd or pl")
    else:
        raise UsageError(f"unknown model kind {kind!r}; choose from {', '.join(data_io.MODEL_KINDS)}")

    _write_text(cfg.out, data_io.format_model(model), stdout)
    trace_csv = "epoch,value\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(trace))
    _write_text(cfg.out + ".trace.csv", trace_csv, stdout)
    if cfg.figures:
        from .plotting import plot_trace
        plot_trace(trace, cfg.out + ".trace.png", ylabel=label, title=kind)
    stderr.write(f"trained {kind}: {len(trace)} trace points, final {trace[-1]!r}\n" if trace else f"trained {kind}\n")
    return EXIT_OK


def _read_requests(path: str, stdin: IO[str]) -> list[tuple[str, list[str]]]:
    if not path:
        raise UsageError("--candidates is required")
    fh = stdin if path == "-" else open(path, encoding="utf-8")
    try:
        out = []
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            user, _, rest = line.partition("\t")
            toks = [t.strip() for t in rest.split(",") if t.strip()]
            if not user.strip():
                raise data_io.ParseError("missing user token", lineno)
            out.append((user.strip(), toks))
        return out
    finally:
        if fh is not stdin:
            fh.close()


def cmd_predict(cfg: RunConfig, stdout: IO[str], stderr: IO[str], stdin: IO[str] = sys.stdin) -> int:
    model = _read_model(cfg.model)
    data = _read_dataset(cfg.input)
    _check_model_fits(model, data)
    requests = _read_requests(cfg.candidates, stdin)
    lines = []
    for utok, ctoks in requests:
        u = _user_index(data, utok)
        seen = list(data.list_for(u).items) if data.has_user(u) else []
        cands = [_item_index(data, t) for t in ctoks]
        if len(set(cands)) != len(cands):
            raise ValidationError(f"user {utok}: duplicate candidate")
        overlap = set(cands) & set(seen)
        if overlap:
            raise ValidationError(f"user {utok}: candidate {data.item_labels[min(overlap)]} already ranked")
        ranked = rank_candidates(model, u, seen, cands, cfg.rank)
        lines.append(utok + "\t" + ",".join(data.item_labels[y] for y in ranked) + "\n")
    _write_text(cfg.out, "".join(lines), stdout)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, stdout: IO[str], stderr: IO[str]) -> int:
    if not 0 < cfg.split < 1:
        raise UsageError("--split must lie in (0, 1)")
    if cfg.ndcg_k < 1:
        raise UsageError("--ndcg-k must be at least 1")
    model = _read_model(cfg.model)
    data = _read_dataset(cfg.input)
    _check_model_fits(model, data)
    report = evaluate_holdout(model, data, cfg.split, cfg.ndcg_k, stderr, cfg.rank)
    stdout.write(report.to_text())
    if cfg.out:
        _write_text(cfg.out, report.to_csv(), stdout)
        if cfg.figures:
            from .plotting import plot_eval
            plot_eval(report.taus, report.ndcgs, cfg.ndcg_k, cfg.out + ".png")
    return EXIT_OK


def evaluate_holdout(model, data: Dataset, split: float, k: int, stderr: IO[str] | None = None,
                     rule: str = "auto") -> EvalReport:
    """Hold out the last ``ceil(split * n_u)`` items of every list and rank them
    among themselves given the head. Users with fewer than two held-out items
    are skipped."""
    report = EvalReport(k=k)
    for rl in data.lists:
        label = data.user_labels[rl.user]
        n_hold = math.ceil(split * len(rl))
        if n_hold < 2:
            report.skipped.append(label)
            if stderr is not None:
                stderr.write(f"warning: user {label} skipped ({len(rl)} items, {n_hold} held out)\n")
            continue
        seen, held = list(rl.items[:-n_hold]), list(rl.items[-n_hold:])
        pred = rank_candidates(model, rl.user, seen, held, rule)
        report.add(label, kendall_tau(pred, held), ndcg_at_k(pred, held, k), heldout_loglik(model, rl.user, held))
    return report


PROPOSALS = {
    "swap": lambda delta: mcmc.propose_swap,
    "relocate": lambda delta: mcmc.propose_relocate,
    "sublist": lambda delta: mcmc.sublist_proposal(delta),
    "mixed": lambda delta: mcmc.mixed_proposal((0.7, 0.2, 0.1), delta),
}


def cmd_sample(cfg: RunConfig, stdout: IO[str], stderr: IO[str]) -> int:
    model = _read_model(cfg.model)
    if not isinstance(model, (PositionalModel, PairwiseModel)):
        raise UsageError("sample needs a log-linear model; draw Plackett-Luce lists with 'synth'")
    data = _read_dataset(cfg.input)
    _check_model_fits(model, data)
    if cfg.proposal not in PROPOSALS:
        raise UsageError(f"unknown proposal {cfg.proposal!r}; choose from {', '.join(PROPOSALS)}")
    if cfg.steps < 0 or cfg.burn_in < 0:
        raise UsageError("--steps and --burn-in must be non-negative")
    u = _user_index(data, cfg.user)
    state = mcmc.start_chain(model, u, data.list_for(u).items)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(u,)))
    proposal = PROPOSALS[cfg.proposal](cfg.delta)
    labels = data.item_labels
    lines = []
    visits: Counter = Counter()

    def record(perm):
        line = ",".join(labels[y] for y in perm)
        visits[line] += 1
        lines.append(line + "\n")

    mcmc.run_chain(state, proposal, 0, rng, burn_in=cfg.burn_in)
    record(state.perm)
    mcmc.run_chain(state, proposal, cfg.steps, rng, record=record)
    lines.append(f"# accepted={state.accepted} proposed={state.proposed} rate={state.acceptance_rate:.6f}\n")
    _write_text(cfg.out, "".join(lines), stdout)
    stderr.write(f"acceptance rate {state.acceptance_rate:.4f} ({state.accepted}/{state.proposed})\n")
    if cfg.figures and cfg.out and cfg.out != "-":
        from .plotting import plot_sample_frequencies
        keys = sorted(visits)
        plot_sample_frequencies(keys, [visits[k] for k in keys], cfg.out + ".png")
    return EXIT_OK


def cmd_synth(cfg: RunConfig, stdout: IO[str], stderr: IO[str]) -> int:
    spec = data_io.SynthSpec(cfg.users, cfg.items, cfg.k, cfg.n_min, cfg.n_max, cfg.scale, cfg.seed)
    data, truth = data_io.generate_synthetic(spec)
    truth_path = cfg.truth or (cfg.out + ".truth.model")
    _write_text(cfg.out, data_io.format_rankings(data), stdout)
    model = factored_pl.FplModel(truth, factored_pl.DampingSchedule("none"), pairwise.RegWeights(0.0, 0.0))
    _write_text(truth_path, data_io.format_model(model), stdout)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate, "sample": cmd_sample, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    d = RunConfig()
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="permrank", description="Permutation models for collaborative ranking.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(p, flag, key, help_, **kw):
        p.add_argument(flag, dest=key, default=S, help=f"{help_} (default: {getattr(d, key)!s})", **kw)

    helps = {
        "train": "fit a model to a rankings file",
        "predict": "rank candidate items per user",
        "evaluate": "tail-holdout evaluation (Kendall tau, NDCG, held-out log-likelihood)",
        "sample": "Metropolis-Hastings samples from a log-linear model",
        "synth": "generate a synthetic Plackett-Luce dataset and its ground truth",
    }
    parsers = {name: sub.add_parser(name, help=h, description=h) for name, h in helps.items()}
    for p in parsers.values():
        p.add_argument("--config", default=None, help="flat 'key = value' settings file; flags override it")

    p = parsers["train"]
    add(p, "--model", "model", "model kind: " + ", ".join(data_io.MODEL_KINDS), choices=data_io.MODEL_KINDS)
    add(p, "--in", "input", "rankings file")
    add(p, "--out", "out", "model file to write; also writes OUT.trace.csv and OUT.trace.png")
    add(p, "--k", "k", "latent dimension / number of communities", type=int)
    add(p, "--alpha", "alpha", "L2 weight on user factors (or gamma)", type=float)
    add(p, "--beta", "beta", "L2 weight on item factors (or lambda)", type=float)
    add(p, "--tau", "tau", "co-occurrence threshold for pairwise lambda", type=int)
    add(p, "--damping", "damping", "stage damping: none or log", choices=factored_pl.DAMPING_RULES)
    add(p, "--loss", "loss", "pairwise-baseline loss", choices=[k.value for k in pairwise.LossKind])
    add(p, "--epochs", "epochs", "epochs / EM iterations", type=int)
    add(p, "--step", "step", "initial step size (CD learning rate)", type=float)
    add(p, "--inner-steps", "inner_steps", "ascent steps per phase / per M-step", type=int)
    add(p, "--trainer", "trainer", "log-linear trainer: cd or pl", choices=("cd", "pl"))
    add(p, "--cd-steps", "cd_steps", "CD chain length, 0 for n_u", type=int)
    add(p, "--structure", "structure", "pseudo-likelihood structure", choices=ll_learning.STRUCTURES)
    add(p, "--delta", "delta", "sublist width", type=int)
    add(p, "--seed", "seed", "random seed", type=int)
    p.add_argument("--no-figures", dest="figures", action="store_false", default=S, help="skip PNG output")

    p = parsers["predict"]
    add(p, "--model", "model", "model file")
    add(p, "--in", "input", "training rankings file (seen lists and id map)")
    add(p, "--candidates", "candidates", "requests file 'user<TAB>item,item,...' ('-' for stdin)")
    add(p, "--rank", "rank", "ranking rule", choices=RANK_RULES)
    add(p, "--out", "out", "output file ('-' or empty for stdout)")

    p = parsers["evaluate"]
    add(p, "--model", "model", "model file")
    add(p, "--in", "input", "rankings file")
    add(p, "--split", "split", "fraction of each list held out from the tail", type=float)
    add(p, "--ndcg-k", "ndcg_k", "NDCG cutoff", type=int)
    add(p, "--rank", "rank", "ranking rule", choices=RANK_RULES)
    add(p, "--out", "out", "per-user CSV; the figure goes to OUT.png")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=S, help="skip PNG output")

    p = parsers["sample"]
    add(p, "--model", "model", "log-linear model file")
    add(p, "--in", "input", "rankings file (chain starts at the user's list)")
    add(p, "--user", "user", "user token")
    add(p, "--steps", "steps", "retained steps", type=int)
    add(p, "--burn-in", "burn_in", "discarded steps", type=int)
    add(p, "--proposal", "proposal", "proposal kernel", choices=tuple(PROPOSALS))
    add(p, "--delta", "delta", "sublist width", type=int)
    add(p, "--seed", "seed", "random seed", type=int)
    add(p, "--out", "out", "output file ('-' or empty for stdout); the figure goes to OUT.png")
    p.add_argument("--no-figures", dest="figures", action="store_false", default=S, help="skip PNG output")

    p = parsers["synth"]
    add(p, "--users", "users", "number of users N", type=int)
    add(p, "--items", "items", "number of items M", type=int)
    add(p, "--k", "k", "latent dimension", type=int)
    add(p, "--n-min", "n_min", "shortest list", type=int)
    add(p, "--n-max", "n_max", "longest list", type=int)
    add(p, "--scale", "scale", "standard deviation of true scores", type=float)
    add(p, "--seed", "seed", "random seed", type=int)
    p.add_argument("--out", dest="out", default=S, help="rankings file to write (default: synth.rankings)")
    add(p, "--truth", "truth", "ground-truth model file (empty: OUT.truth.model)")
    return parser


def main(argv: Sequence[str] | None = None, stdout: IO[str] | None = None, stderr: IO[str] | None = None,
         stdin: IO[str] | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    stdin = stdin or sys.stdin
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve(args.command, flags, args.config)
        echo(cfg, stderr)
        if args.command == "predict":
            return cmd_predict(cfg, stdout, stderr, stdin)
        return COMMANDS[args.command](cfg, stdout, stderr)
    except DivergenceError as e:
        stderr.write(f"error: training diverged: {e}\n")
        return EXIT_DIVERGED
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        stderr.write(f"error: {e}\n")
        return EXIT_IO
    except (UsageError, ValidationError, data_io.ParseError, data_io.ModelFormatError, ValueError, KeyError,
            IndexError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        stderr.write(f"error: {msg}\n")
        return EXIT_INPUT
    except OSError as e:
        stderr.write(f"error: {e}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
