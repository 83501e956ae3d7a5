import numpy as np
import pytest

from hairl import diffcore as dc
from hairl import oracle as orc
from hairl.data import Batch
from hairl.envs import expert_demos, make_env
from hairl.envs.enumerable import bandit
from hairl.errors import DimensionError
from hairl.option_policy import HierarchicalPolicy, rollout
from hairl.trainer import (TrainConfig, Trainer, ValueNet, gae, load_policy, metric_columns,
                           normalize_advantages, policy_update, surrogate_loss)

SMALL = dict(policy_hidden=(16,), disc_hidden=(16,), value_hidden=(16,), posterior_hidden=8,
             embed_dim=4, rollouts_per_episode=4)


@pytest.fixture(scope="module")
def fr_demos():
    return expert_demos("fourrooms-t1", 4, seed=0, annotate=True)


# --- advantages ----------------------------------------------------------------

def test_gae_closed_form():
    r = np.array([[1.0, 2.0, 0.0]])
    v = np.array([[0.5, 0.25, 0.0, 9.0]])
    mask = np.array([[True, True, False]])
    g, lam = 0.9, 0.5
    adv = gae(r, v, mask, np.array([2]), np.array([True]), g, lam)
    d1 = 2.0 + g * 0.0 - 0.25  # terminated: no bootstrap after the last step
    d0 = 1.0 + g * 0.25 - 0.5
    assert adv[0, 1] == pytest.approx(d1) and adv[0, 0] == pytest.approx(d0 + g * lam * d1)
    assert adv[0, 2] == 0.0
    trunc = gae(r, v, mask, np.array([2]), np.array([False]), g, lam)
    assert trunc[0, 1] == pytest.approx(2.0 + g * 0.0 - 0.25)  # bootstrap from v[2] = 0.0
    v2 = v.copy(); v2[0, 2] = 1.0
    assert gae(r, v2, mask, np.array([2]), np.array([False]), g, lam)[0, 1] == pytest.approx(2.0 + g - 0.25)
    assert gae(r, v2, mask, np.array([2]), np.array([True]), g, lam)[0, 1] == pytest.approx(2.0 - 0.25)


def test_normalize_advantages():
    a = normalize_advantages(np.array([1.0, 2.0, 3.0]))
    assert a.mean() == pytest.approx(0) and a.std() == pytest.approx(1)
    assert (normalize_advantages(np.zeros(4)) == 0).all()


# --- clipped surrogate -------------------------------------------------------------

def _frozen_batch(rng, env, pol, n=4):
    trajs = rollout(env, pol, rng, n=n)
    b = Batch.from_trajectories(trajs, env.action_spec)
    S, Z, Zn, A, _ = b.steps()
    old = np.concatenate([t.logp for t in trajs]) + rng.normal(0, 0.3, len(S))
    return S, Z, Zn, A, old, rng.standard_normal(len(S))


@pytest.mark.parametrize("seed", range(3))
def test_surrogate_gradient(seed):
    rng = np.random.default_rng(seed)
    env = make_env("enum-small")
    pol = HierarchicalPolicy(env.state_dim, env.action_spec, 2, embed_dim=4, hidden=(6,), rng=rng)
    S, Z, Zn, A, old, adv = _frozen_batch(rng, env, pol)
    pol.context_grad_from_low = True
    assert dc.grad_check(lambda: surrogate_loss(pol, S, Z, Zn, A, old, adv, 0.2), pol.params) < 1e-4


def test_surrogate_clipping_zeroes_gradient(rng):
    env = make_env("enum-small")
    pol = HierarchicalPolicy(env.state_dim, env.action_spec, 2, embed_dim=4, hidden=(6,), rng=rng)
    S, Z, Zn, A, _, _ = _frozen_batch(rng, env, pol)
    logp = pol.joint_log_prob(S, Z, Zn, A).data
    # ratio = e^{1} > 1 + eps with positive advantage: clipped branch, no gradient
    pol.params.zero_grad()
    surrogate_loss(pol, S, Z, Zn, A, logp - 1.0, np.ones(len(S)), 0.2).backward()
    assert all(t.grad is None or np.all(t.grad == 0) for _, t in pol.params.items())
    # ratio = 1 exactly: the loss is -mean(adv)
    assert surrogate_loss(pol, S, Z, Zn, A, logp, np.arange(len(S)), 0.2).item() == \
        pytest.approx(-np.arange(len(S)).mean())


def test_zero_advantage_leaves_policy_unchanged(rng):
    env = bandit()
    cfg = TrainConfig(ppo_epochs=2, **SMALL)
    pol = HierarchicalPolicy(1, env.action_spec, 2, 4, 2, (8,), rng)
    val = ValueNet(1, 2, (8,), rng)
    trajs = rollout(env, pol, rng, n=8)
    b = Batch.from_trajectories(trajs, env.action_spec)
    before = {k: t.data.copy() for k, t in pol.params.items()}
    # constant reward equal to the value at every step gives zero advantages; with
    # a zero value net and zero reward this holds exactly
    for _, t in val.params.items():
        t.data[...] = 0.0
    policy_update(pol, val, b, np.concatenate([t.logp for t in trajs]), np.zeros(b.mask.shape),
                  dc.Adam(pol.params, 1e-2), dc.Adam(val.params, 0.0), cfg)
    assert all(np.array_equal(before[k], t.data) for k, t in pol.params.items())


def test_policy_update_improves_bandit():
    """On a bandit whose reward is known exactly, expected reward rises over updates."""
    env = bandit()
    rng = np.random.default_rng(0)
    cfg = TrainConfig(**SMALL)
    pol = HierarchicalPolicy(1, env.action_spec, 2, 4, 2, (8,), rng)
    val = ValueNet(1, 2, (8,), rng)
    po, vo = dc.Adam(pol.params, 1e-2), dc.Adam(val.params, 1e-2)

    def expected_reward():
        hi, lo = orc.tabulate_policy(pol, env)
        return float(hi[0, 0] @ lo[0, :, 1])

    history = [expected_reward()]
    for _ in range(50):
        trajs = rollout(env, pol, rng, n=32)
        b = Batch.from_trajectories(trajs, env.action_spec)
        r = np.array([[t.env_rewards[0]] for t in trajs])
        policy_update(pol, val, b, np.concatenate([t.logp for t in trajs]), r, po, vo, cfg)
        history.append(expected_reward())
    assert history[-1] > 0.95 > history[0]
    assert np.mean(np.diff(history) > -0.02) > 0.9


# --- config -------------------------------------------------------------------------

def test_config_validation():
    assert TrainConfig(mode="option-airl", alpha1=0.5).alpha1 == 0.0
    for bad in (dict(mode="x"), dict(num_options=0), dict(alpha1=-1.0), dict(horizon=0),
                dict(expert_annotations="maybe")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(policy_hidden=[8, 8])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# --- trainer behaviour ---------------------------------------------------------------

def _run(demos, episodes=3, **kw):
    tr = Trainer(TrainConfig(**{**SMALL, **kw}), demos)
    return tr, tr.run(episodes)


def test_training_is_deterministic(fr_demos):
    d = fr_demos.without_options()
    _, a = _run(d, em_interval=2)
    _, b = _run(d, em_interval=2)
    assert a == b
    _, c = _run(d, em_interval=2, seed=1)
    assert a != c


def test_option_airl_equals_h_airl_with_zero_alpha1(fr_demos):
    d = fr_demos.without_options()
    ta, a = _run(d, mode="option-airl")
    tb, b = _run(d, mode="h-airl", alpha1=0.0)
    assert a == b
    for k, t in ta.policy.params.items():
        assert np.array_equal(t.data, tb.policy.params[k].data)


def test_sampled_entropy_changes_only_the_bound_reward(fr_demos):
    d = fr_demos.without_options()
    _, a = _run(d, episodes=2)
    _, b = _run(d, episodes=2, sampled_entropy=True)
    assert a[0]["env_return_mean"] == b[0]["env_return_mean"]  # same first rollouts
    assert a[1] != b[1]
    _, c = _run(d, episodes=2, alpha1=0.0)
    _, e = _run(d, episodes=2, alpha1=0.0, sampled_entropy=True)
    assert c == e


def test_provided_annotations_skip_e_step(fr_demos):
    tr, _ = _run(fr_demos, expert_annotations="provided")
    assert tr.em_log == []
    for z, t in zip(tr.expert_options, fr_demos.trajectories):
        assert np.array_equal(z, t.options)
    with pytest.raises(ValueError):
        Trainer(TrainConfig(expert_annotations="provided", **SMALL), fr_demos.without_options())


def test_inferred_annotations_run_e_step(fr_demos):
    tr, _ = _run(fr_demos.without_options(), episodes=5, em_interval=2)
    assert [r["episode"] for r in tr.em_log] == [0, 2, 4]
    assert all(len(z) == t.length + 1 and z[0] == 0
               for z, t in zip(tr.expert_options, fr_demos.trajectories))


def test_metrics_row(fr_demos):
    _, rows = _run(fr_demos.without_options(), episodes=2, mode="h-gail")
    assert list(rows[0]) == metric_columns(2)
    assert sum(rows[0][f"option_usage_{i}"] for i in range(2)) == pytest.approx(1.0)
    assert all(np.isfinite(v) for v in rows[1].values())


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        Trainer(TrainConfig(env="fourrooms-t1", **SMALL), expert_demos("pointroom-t1", 2))
    with pytest.raises(ValueError):
        Trainer(TrainConfig(**SMALL), expert_demos("fourrooms-t1", 1).subset(0))


def test_checkpoint_round_trip_and_transfer(tmp_path, fr_demos):
    src, _ = _run(fr_demos.without_options(), episodes=2)
    src.run(1, out_dir=tmp_path / "src")
    ckpt = tmp_path / "src" / "checkpoint_final.npz"
    pol, meta = load_policy(ckpt)
    assert meta["env"] == "fourrooms-t1" and meta["episode"] == 3
    S = src.env.features(src.env.open_cells())
    for z in range(2):
        assert np.array_equal(pol.low_level_dist(S, np.full(len(S), z)),
                              src.policy.low_level_dist(S, np.full(len(S), z)))

    dst = Trainer(TrainConfig(env="fourrooms-t2", seed=7, **SMALL),
                  expert_demos("fourrooms-t2", 2).without_options())
    hi_before = {k: t.data.copy() for k, t in dst.policy.params.items() if k.startswith("hi.")}
    dst.transfer_init(ckpt)
    for z in range(2):
        assert np.array_equal(dst.policy.low_level_dist(S, np.full(len(S), z)),
                              src.policy.low_level_dist(S, np.full(len(S), z)))
    assert all(np.array_equal(v, dst.policy.params[k].data) for k, v in hi_before.items())

    wrong = Trainer(TrainConfig(env="fourrooms-t2", num_options=3, **SMALL),
                    expert_demos("fourrooms-t2", 2).without_options())
    with pytest.raises(DimensionError, match="num_options"):
        wrong.transfer_init(ckpt)


def test_run_writes_outputs(tmp_path, fr_demos):
    tr = Trainer(TrainConfig(checkpoint_interval=2, em_interval=2, **SMALL), fr_demos.without_options())
    tr.run(4, out_dir=tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"config.json", "metrics.csv", "em.csv", "checkpoint_000002.npz",
            "checkpoint_000004.npz", "checkpoint_final.npz"} <= names
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0].split(",") == metric_columns(2) and len(lines) == 5
    assert len((tmp_path / "em.csv").read_text().splitlines()) == 3


def test_evaluate_uses_its_own_stream(fr_demos):
    tr = Trainer(TrainConfig(**SMALL), fr_demos.without_options())
    a, b = tr.evaluate(episodes=5), tr.evaluate(episodes=5)
    assert np.array_equal(a.returns, b.returns)
    assert a.option_usage.sum() == pytest.approx(1.0)
