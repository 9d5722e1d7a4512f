import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_mixture
from permrank.core import Dataset, FactorPair, RankedList
from permrank.data_io import SynthSpec, generate_synthetic
from permrank.factored_pl import list_log_likelihood, train_fpl
from permrank.latent_pl import (
    MixtureModel,
    Responsibilities,
    e_step,
    em_train,
    insert_position,
    insertion_sweep,
    log_likelihood,
    lower_bound,
    m_step_mixture,
    m_step_scores_grad,
    rank_unseen,
    stage_prob,
    total_log_likelihood,
)
from permrank.optim import Schedule
from permrank.pairwise import RegWeights


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureModel([[0.6, 0.6]], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MixtureModel([[1.0]], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MixtureModel([[1.0]], [[np.inf]])


def test_stage_prob_examples(rng):
    m = MixtureModel([[0.5, 0.5]], np.ones((2, 6)))
    assert stage_prob(m, 0, [0, 1, 2, 3], 0, 1) == pytest.approx(0.25, rel=1e-15)
    r = random_mixture(rng, 1, 6, 2)
    assert stage_prob(r, 0, [4, 1, 2], 2, 0) == pytest.approx(1.0, rel=1e-15)
    items = [5, 0, 3, 1]
    for z in range(2):
        for i in range(4):
            ref = oracles.stage_prob(r.community_scores[z].tolist(), items, i)
            assert stage_prob(r, 0, items, i, z) == pytest.approx(ref, rel=1e-12)


def test_k1_equals_plain_pl(rng):
    s = rng.standard_normal(7)
    m = MixtureModel([[1.0]], s[None, :])
    rl = RankedList(0, (6, 2, 0, 5))
    assert log_likelihood(m, rl) == pytest.approx(list_log_likelihood(s[[6, 2, 0, 5]]), rel=1e-12)


def test_equal_scores_uniform():
    m = MixtureModel([[0.3, 0.7]], np.full((2, 4), 1.3))
    assert log_likelihood(m, RankedList(0, (0, 1, 2))) == pytest.approx(-math.log(6), rel=1e-14)


def test_log_likelihood_matches_naive(rng):
    for _ in range(10):
        m = random_mixture(rng, 2, 8, 3)
        items = [int(y) for y in rng.permutation(8)[:5]]
        ref = oracles.latent_logprob(m.mixture[1].tolist(), m.community_scores.tolist(), items)
        assert log_likelihood(m, RankedList(1, tuple(items))) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 5))
def test_normalization(seed, K, n):
    m = random_mixture(np.random.default_rng(seed), 1, 6, K, scale=2.0)
    total = sum(math.exp(log_likelihood(m, RankedList(0, p))) for p in itertools.permutations(range(n)))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_e_step_identical_communities():
    m = MixtureModel([[0.2, 0.8], [0.5, 0.5]], np.tile(np.arange(5.0), (2, 1)))
    data = Dataset(2, 5, (RankedList(0, (1, 3, 0)), RankedList(1, (4, 2))))
    for rl, Q in zip(data.lists, e_step(m, data).values):
        np.testing.assert_allclose(Q, np.repeat(m.mixture[rl.user][:, None], len(rl), axis=1), atol=1e-15)


def test_e_step_k1(toy_data, rng):
    m = random_mixture(rng, 3, 5, 1)
    for Q in e_step(m, toy_data).values:
        assert np.all(Q == 1.0)


def test_e_step_direct(toy_data, rng):
    m = random_mixture(rng, 3, 5, 3)
    resp = e_step(m, toy_data)
    for rl, Q in zip(toy_data.lists, resp.values):
        for i in range(len(rl)):
            w = [m.mixture[rl.user, z] * oracles.stage_prob(m.community_scores[z].tolist(), list(rl.items), i) for z in range(3)]
            np.testing.assert_allclose(Q[:, i], np.array(w) / sum(w), atol=1e-12)
        np.testing.assert_allclose(Q.sum(axis=0), 1.0, atol=1e-12)
        assert np.all((Q >= 0) & (Q <= 1))


def test_m_step_mixture_examples(toy_data):
    mix = np.full((3, 2), 0.5)
    q = np.array([0.3, 0.7])
    resp = Responsibilities(tuple(np.repeat(q[:, None], len(rl), axis=1) for rl in toy_data.lists))
    np.testing.assert_allclose(m_step_mixture(resp, toy_data, mix), np.tile(q, (3, 1)), atol=1e-15)
    one = Dataset(1, 3, (RankedList(0, (2,)),))
    r1 = Responsibilities((np.array([[0.25], [0.75]]),))
    np.testing.assert_allclose(m_step_mixture(r1, one, np.full((1, 2), 0.5)), [[0.25, 0.75]], atol=1e-15)


def test_m_step_mixture_random_mean(toy_data, rng):
    vals = []
    for rl in toy_data.lists:
        Q = rng.random((3, len(rl)))
        vals.append(Q / Q.sum(axis=0))
    new = m_step_mixture(Responsibilities(tuple(vals)), toy_data, np.full((3, 3), 1 / 3))
    for rl, Q in zip(toy_data.lists, vals):
        np.testing.assert_allclose(new[rl.user], Q.mean(axis=1), rtol=0, atol=1e-15)
        assert abs(new[rl.user].sum() - 1.0) <= 1e-12


def test_m_step_keeps_unobserved_rows():
    data = Dataset(2, 3, (RankedList(0, (1, 2)),))
    mix = np.array([[0.5, 0.5], [0.1, 0.9]])
    r = Responsibilities((np.array([[1.0, 1.0], [0.0, 0.0]]),))
    new = m_step_mixture(r, data, mix)
    assert new[1].tolist() == [0.1, 0.9]
    assert new[0, 1] > 0  # floored, no exact zero


def test_scores_grad_zero_for_silent_community(toy_data, rng):
    m = random_mixture(rng, 3, 5, 2)
    resp = Responsibilities(tuple(np.vstack([np.ones(len(rl)), np.zeros(len(rl))]) for rl in toy_data.lists))
    G = m_step_scores_grad(m, resp, toy_data)
    assert np.all(G[1] == 0.0)


def test_scores_grad_two_equal_items():
    m = MixtureModel([[1.0]], [[0.7, 0.7]])
    data = Dataset(1, 2, (RankedList(0, (0, 1)),))
    G = m_step_scores_grad(m, e_step(m, data), data)
    np.testing.assert_allclose(G, [[0.5, -0.5]], atol=1e-15)


def test_scores_grad_finite_differences(toy_data):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        m = random_mixture(rng, 3, 5, 3)
        resp = e_step(m, toy_data)
        G = m_step_scores_grad(m, resp, toy_data)
        fd = oracles.central_diff(lambda S: lower_bound(MixtureModel(m.mixture, S), resp, toy_data), m.community_scores)
        assert oracles.max_rel_err(G, fd) <= 1e-4


def test_em_zero_iterations(toy_data, rng):
    init = random_mixture(rng, 3, 5, 2)
    model, trace = em_train(toy_data, 2, iters=0, init=init)
    assert model == init and len(trace) == 1


def test_em_monotone_small():
    data, _ = generate_synthetic(SynthSpec(40, 12, 2, 3, 8, scale=2.0, seed=2))
    model, trace = em_train(data, 2, iters=25, seed=1)
    assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))
    assert trace[-1] > trace[0]
    assert total_log_likelihood(model, data) == pytest.approx(trace[-1], rel=1e-12)


def test_em_k1_matches_score_only_fpl():
    data, _ = generate_synthetic(SynthSpec(25, 10, 2, 3, 7, scale=2.0, seed=6))
    rng = np.random.default_rng(0)
    H0 = 0.01 * rng.standard_normal((1, 10))
    lat, ltrace = em_train(data, 1, iters=15, inner_steps=2, step=0.1, init=MixtureModel(np.ones((25, 1)), H0))
    fpl, ftrace = train_fpl(
        data, 1, reg=RegWeights(0, 0), schedule=Schedule(epochs=15, step=0.1, inner_steps=2),
        init=FactorPair(np.ones((25, 1)), H0), fit_users=False,
    )
    np.testing.assert_allclose(lat.community_scores, fpl.factors.H, rtol=0, atol=1e-10)
    n = min(len(ltrace), len(ftrace))
    np.testing.assert_allclose(ltrace[:n], ftrace[:n], rtol=1e-12)


def _naive_insertion(m, user, seen, y):
    return [
        oracles.latent_logprob(m.mixture[user].tolist(), m.community_scores.tolist(), seen[:j] + [y] + seen[j:])
        for j in range(len(seen) + 1)
    ]


def test_insertion_sweep_matches_naive(rng):
    for _ in range(20):
        m = random_mixture(rng, 2, 9, 3)
        perm = [int(y) for y in rng.permutation(9)]
        seen, y = perm[:6], perm[6]
        sw = insertion_sweep(m, 1, seen, y)
        np.testing.assert_allclose(sw.log_probs, _naive_insertion(m, 1, seen, y), rtol=0, atol=1e-9)
        assert sw.evaluations == 7 * 3 + 4 * 3 * 5


def test_insertion_evaluation_count_linear(rng):
    m = random_mixture(rng, 1, 20, 2)
    for n in range(1, 15):
        sw = insertion_sweep(m, 0, list(range(n)), 19)
        assert sw.evaluations == (n + 1) * 2 + 4 * 2 * (n - 1)


def test_insert_into_empty(rng):
    m = random_mixture(rng, 1, 3, 2)
    assert insert_position(m, 0, [], 1) == (0, 0.0)


def test_dominant_item_goes_first():
    s = np.array([[0.0, 1.0, -1.0, 40.0]])
    m = MixtureModel([[1.0]], s)
    assert insert_position(m, 0, [0, 1, 2], 3)[0] == 0


def test_insert_existing_item_rejected(rng):
    with pytest.raises(ValueError):
        insert_position(random_mixture(rng, 1, 3, 1), 0, [0, 1], 1)


def test_rank_unseen_examples(rng):
    m = random_mixture(rng, 1, 6, 2)
    assert rank_unseen(m, 0, [0, 1], [4]) == [4]
    s = np.array([[0.0, 0.0, 0.0, 30.0, -30.0]])
    m2 = MixtureModel([[1.0]], s)
    assert rank_unseen(m2, 0, [0, 1, 2], [4, 3]) == [3, 4]


def test_rank_unseen_matches_brute_force(rng):
    for _ in range(20):
        m = random_mixture(rng, 1, 9, 3)
        perm = [int(y) for y in rng.permutation(9)]
        seen, cand = perm[:5], perm[5:]
        keyed = []
        for y in cand:
            lp = _naive_insertion(m, 0, seen, y)
            j = int(np.argmax(lp))
            keyed.append((j, -lp[j], y))
        assert rank_unseen(m, 0, seen, cand) == [y for _, _, y in sorted(keyed)]


def test_insertion_accurate_when_complement_is_tiny():
    # the new item dominates the last seen item, so the last-slot complement is ~e^-40
    m = MixtureModel([[0.3, 0.7]], [[0.0, 1.0, 0.5, 40.0], [0.2, -1.0, 0.1, 39.0]])
    sw = insertion_sweep(m, 0, [0, 1, 2], 3)
    np.testing.assert_allclose(sw.log_probs, _naive_insertion(m, 0, [0, 1, 2], 3), rtol=1e-9)
    assert sw.best[0] == 0
