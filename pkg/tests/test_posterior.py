import math

import numpy as np
import pytest

from hairl import diffcore as dc
from hairl import oracle
from hairl.data import ActionSpec, Batch, Trajectory, one_hot
from hairl.envs import make_env
from hairl.errors import DimensionError
from hairl.posterior import RecurrentPosterior

SPEC = ActionSpec("discrete", 2)


def _zero(post):
    for _, t in post.params.items():
        t.data[...] = 0.0
    return post


def test_step_trivial_cases(rng):
    z = _zero(RecurrentPosterior(3, SPEC, 4, hidden=5, embed=6, rng=rng))
    logits, st = z.posterior_step(z.initial_state(2), rng.standard_normal((2, 5)), np.zeros((2, 4)))
    assert np.allclose(dc.log_softmax(logits).data, -math.log(4))
    one = RecurrentPosterior(3, SPEC, 1, rng=rng)
    lp = dc.log_softmax(one.posterior_step(one.initial_state(1), np.ones((1, 5)), np.ones((1, 1)))[0])
    assert np.allclose(lp.data, 0.0)
    with pytest.raises(DimensionError):
        z.posterior_step(z.initial_state(1), np.ones((1, 4)), np.zeros((1, 4)))


def test_sequence_log_prob_trivial(rng):
    X = rng.standard_normal((4, 5))
    assert abs(RecurrentPosterior(3, SPEC, 1, rng=rng).sequence_log_prob(X, np.zeros(4, int)).item()) < 1e-12
    z = _zero(RecurrentPosterior(3, SPEC, 2, rng=rng))
    assert abs(z.sequence_log_prob(X, np.array([0, 1, 0, 1])).item() + 3 * math.log(2)) < 1e-12
    with pytest.raises(ValueError):
        z.sequence_log_prob(X, np.zeros(3, int))


def _scalar_posterior(post, X, Z):
    """Independent scalar recomputation of every step's log-probability."""
    p = {k: v.data for k, v in post.params.items()}
    N, H, E = post.num_options, post.hidden, post.embed
    sig = lambda v: 1 / (1 + math.exp(-v))
    h = [0.0] * H
    out = []
    for t in range(len(X)):
        e = [sum(X[t][k] * p["embed.W"][k, j] for k in range(len(X[t]))) + p["embed.b"][j] for j in range(E)]
        zp = [0.0] * N if t == 0 else [1.0 if i == Z[t - 1] else 0.0 for i in range(N)]
        inp = e + zp
        full = inp + h
        logits = [sum(full[k] * p["head.W"][k, n] for k in range(len(full))) + p["head.b"][n] for n in range(N)]
        if t > 0:
            m = max(logits)
            lse = m + math.log(sum(math.exp(v - m) for v in logits))
            out.append(logits[Z[t]] - lse)
        pre = [sum(inp[k] * p["gru.Wx"][k, j] for k in range(len(inp))) + p["gru.b"][j] for j in range(3 * H)]
        r = [sig(pre[j] + sum(h[k] * p["gru.U_ru"][k, j] for k in range(H))) for j in range(H)]
        u = [sig(pre[H + j] + sum(h[k] * p["gru.U_ru"][k, H + j] for k in range(H))) for j in range(H)]
        c = [math.tanh(pre[2 * H + j] + sum(r[k] * h[k] * p["gru.U_c"][k, j] for k in range(H))) for j in range(H)]
        h = [(1 - u[j]) * h[j] + u[j] * c[j] for j in range(H)]
    return np.array(out)


def test_matches_scalar_oracle(rng):
    post = RecurrentPosterior(3, SPEC, 3, hidden=4, embed=5, rng=rng, init_scale=2.0)
    X, Z = rng.standard_normal((5, 5)), np.array([0, 2, 1, 1, 0])
    ref = _scalar_posterior(post, X, Z)
    assert np.max(np.abs(post.step_log_probs(X, Z).data[0] - ref)) < 1e-12
    assert abs(post.sequence_log_prob(X, Z).item() - ref.sum()) < 1e-12


def test_step_distributions_normalized(rng):
    post = RecurrentPosterior(3, SPEC, 3, rng=rng, init_scale=2.0)
    X = rng.standard_normal((2, 4, 5))
    total = np.zeros((2, 3))
    for z in range(3):
        Z = np.array([[0, 1, 2, z], [0, 0, 1, z]])
        total += np.exp(post.step_log_probs(X, Z).data)
    assert np.allclose(total[:, -1], 1.0, atol=1e-12)


def test_posterior_gradient(rng):
    post = RecurrentPosterior(3, SPEC, 2, hidden=4, embed=3, rng=rng)
    X, Z = rng.standard_normal((2, 4, 5)), rng.integers(0, 2, (2, 4))
    Z[:, 0] = 0
    assert dc.grad_check(lambda: post.sequence_log_prob(X, Z).sum(), post.params) < 1e-6


def test_batch_log_probs_masks_padding(rng):
    env = make_env("fourrooms-t1")
    post = RecurrentPosterior(env.state_dim, env.action_spec, 2, rng=rng)
    trajs = [Trajectory(rng.random((L + 1, 6)), rng.integers(0, 4, L), np.r_[0, rng.integers(0, 2, L)])
             for L in (3, 5)]
    b = Batch.from_trajectories(trajs, env.action_spec)
    lp = post.batch_log_probs(b).data
    assert (lp[0, 3:] == 0).all()
    alone = post.sequence_log_prob(b.observations()[0, :4], b.options[0, :4]).item()
    assert abs(lp[0].sum() - alone) < 1e-12


def test_e_step_trivial(rng):
    X = rng.standard_normal((6, 5))
    assert (RecurrentPosterior(3, SPEC, 1, rng=rng).e_step_sample(X, rng) == 0).all()
    post = RecurrentPosterior(3, SPEC, 2, rng=rng)
    post.params["head.b"].data[:] = [20.0, -20.0]
    post.params["head.W"].data[:] = 0.0
    a = post.e_step_sample(X, np.random.default_rng(0))
    b = post.e_step_sample(X, np.random.default_rng(99))
    assert np.array_equal(a, b) and (a == 0).all()


def test_e_step_frequencies_match_sequence_probabilities(rng):
    post = RecurrentPosterior(3, SPEC, 2, hidden=4, embed=4, rng=rng, init_scale=3.0)
    X = rng.standard_normal((3, 5))
    M = 100_000
    Z = post.e_step_sample(np.broadcast_to(X, (M, 3, 5)), np.random.default_rng(7))
    assert (Z[:, 0] == 0).all()
    for z1 in range(2):
        for z2 in range(2):
            p = math.exp(post.sequence_log_prob(X, np.array([0, z1, z2])).item())
            freq = np.mean((Z[:, 1] == z1) & (Z[:, 2] == z2))
            assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / M)


def test_e_step_with_exact_posterior_distributes_as_truth():
    """A posterior fitted on enumerated data reproduces the exact conditional."""
    mdp = make_env("enum-chain")
    hi = np.full((3, 2, 2), 0.5)
    lo = np.array([[[0.9, 0.1], [0.1, 0.9]]] * 3)  # option 0 tends to stay, option 1 to move
    table = oracle.joint_distribution(mdp, hi, lo)
    exact = oracle.exact_posterior(table)
    X = oracle.observations(table, mdp)
    post = RecurrentPosterior(3, mdp.action_spec, 2, hidden=16, embed=16, rng=np.random.default_rng(0))
    opt = dc.Adam(post.params, lr=0.02)
    w = table.p
    for _ in range(400):
        opt.zero_grad()
        (-(post.step_log_probs(X, table.options).sum(axis=1) * w).sum()).backward()
        opt.step()
    fitted = oracle.network_posterior(table, post, mdp)
    live = w > 1e-12
    assert np.max(np.abs(np.exp(fitted[live]) - np.exp(exact[live]))) < 0.02
