import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from robustsafe import envs
from robustsafe.adv_train import (
    ReplayBuffer,
    Scheduler,
    adversarial_train,
    build_agent,
    collect_rollouts,
    critic_update,
    epsilon_schedule,
    make_streams,
    msbe,
    run_training,
    train_ppol,
)
from robustsafe.attackers import AttackConfig, Attacker
from robustsafe.learner import TrainConfig
from robustsafe.nn import CriticNet, GaussianPolicyNet, polyak_update

TINY = TrainConfig(epochs=3, batch_size=60, minibatch_size=20, actor_steps=3, value_steps=3,
                   q_steps=3, q_batch=16, hidden=(8, 8), env_overrides={"episode_len": 20},
                   attack={"steps": 5, "mad_steps": 5})


class Sgd:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def filled_buffer(n, capacity=None, obs_dim=2, act_dim=1, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity or n, obs_dim, act_dim)
    buf.add(rng.normal(size=(n, obs_dim)), rng.normal(size=(n, act_dim)),
            rng.normal(size=(n, obs_dim)), rng.normal(size=n), rng.random(n), np.zeros(n))
    return buf


# --- replay buffer -------------------------------------------------------------

def test_buffer_wraps_and_caps_size():
    buf = ReplayBuffer(4, 1, 1)
    for k in range(6):
        buf.add([[k]], [[k]], [[k]], k, 0.0, 0.0)
        assert len(buf) == min(k + 1, 4)
    np.testing.assert_array_equal(buf.obs[:, 0], [4, 5, 2, 3])
    assert buf.cursor == 2


def test_buffer_uniform_sampling_chi_square():
    buf = filled_buffer(10)
    idx = buf.sample_indices(np.random.default_rng(0), 100_000)
    counts = np.bincount(idx, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


def test_buffer_samples_only_filled_region():
    buf = filled_buffer(3, capacity=10)
    assert buf.sample_indices(np.random.default_rng(1), 1000).max() < 3


def test_empty_buffer_errors():
    buf = ReplayBuffer(5, 2, 1)
    with pytest.raises(ValueError):
        buf.sample(np.random.default_rng(0), 4)
    rng = np.random.default_rng(0)
    q = CriticNet(2, 1, (4,), rng)
    pol = GaussianPolicyNet(2, 1, (4,), rng)
    with pytest.raises(ValueError):
        critic_update(buf, q, q.copy(), pol, TrainConfig(), Sgd(q.params(), 0.1), rng)


# --- critic fitting ---------------------------------------------------------------

def zero_critic(rng, obs_dim=2, act_dim=1, value=0.0):
    q = CriticNet(obs_dim, act_dim, (6,), rng)
    q.net.weights[-1][...] = 0.0
    q.net.biases[-1][...] = value
    return q


def test_critic_update_all_zero_is_stationary():
    rng = np.random.default_rng(2)
    buf = filled_buffer(20)
    buf.rew[:] = 0.0
    buf.cost[:] = 0.0
    q, pol = zero_critic(rng), GaussianPolicyNet(2, 1, (4,), rng)
    before = [p.copy() for p in q.params()]
    for signal in ("reward", "cost"):
        loss = critic_update(buf, q, q.copy(), pol, TrainConfig(q_batch=8), Sgd(q.params(), 0.1),
                             rng, signal)
        assert loss == 0.0
    for a, b in zip(before, q.params()):
        np.testing.assert_array_equal(a, b)


def test_msbe_target_oracle():
    rng = np.random.default_rng(3)
    buf = filled_buffer(6)
    buf.done[:3] = 1.0
    q = CriticNet(2, 1, (6,), rng)
    target = zero_critic(rng, value=2.5)
    pol = GaussianPolicyNet(2, 1, (4,), rng)
    sample = {"obs": buf.obs, "act": buf.act, "next_obs": buf.next_obs, "rew": buf.rew,
              "cost": buf.cost, "done": buf.done}
    for signal, f in (("reward", buf.rew), ("cost", buf.cost)):
        loss, _ = msbe(q, target, pol, sample, signal, 0.9, rng)
        y = f + 0.9 * (1.0 - buf.done) * 2.5
        assert loss == pytest.approx(np.mean((q.value(buf.obs, buf.act) - y) ** 2), rel=1e-12)


def test_single_transition_loss_decreases_monotonically():
    rng = np.random.default_rng(4)
    buf = filled_buffer(1)
    buf.done[:] = 1.0                     # target is the reward itself
    q, pol = CriticNet(2, 1, (8,), rng), GaussianPolicyNet(2, 1, (4,), rng)
    cfg, opt = TrainConfig(q_batch=1), Sgd(q.params(), 1e-2)
    losses = [critic_update(buf, q, q.copy(), pol, cfg, opt, rng) for _ in range(50)]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.5 * losses[0]


def test_critic_lr_default():
    assert TrainConfig().critic_lr == 1e-3


# --- polyak and schedule -----------------------------------------------------------

def test_polyak_limits():
    rng = np.random.default_rng(5)
    online = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    target = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    kept = [t.copy() for t in target]
    polyak_update(target, online, 1.0)
    for a, b in zip(target, kept):
        np.testing.assert_array_equal(a, b)
    polyak_update(target, online, 0.0)
    for a, b in zip(target, online):
        np.testing.assert_array_equal(a, b)


def test_scheduler_polyak_geometric_decay():
    rng = np.random.default_rng(6)
    q = CriticNet(2, 1, (4,), rng)
    target = CriticNet(2, 1, (4,), rng)
    gap0 = np.concatenate([(t - o).ravel() for t, o in zip(target.params(), q.params())])
    sched = Scheduler(10, 0.05, 0.5, {"q": q}, {"q": target}, 0.995)
    for k in range(1, 201):
        sched.sync_targets()
        if k % 50 == 0:
            gap = np.concatenate([(t - o).ravel() for t, o in zip(target.params(), q.params())])
            np.testing.assert_allclose(gap, 0.995**k * gap0, rtol=1e-9, atol=1e-15)


def test_epsilon_schedule_examples():
    assert epsilon_schedule(0, 100, 0.05, 0.5) == 0.0
    assert epsilon_schedule(50, 100, 0.05, 0.5) == 0.05
    assert epsilon_schedule(25, 100, 0.05, 0.5) == pytest.approx(0.025)
    assert epsilon_schedule(90, 100, 0.05, 0.5) == 0.05
    assert epsilon_schedule(0, 100, 0.05, 0.0) == 0.05
    with pytest.raises(ValueError):
        epsilon_schedule(101, 100, 0.05, 0.5)


@settings(max_examples=50, deadline=None)
@given(total=st.integers(1, 300), max_eps=st.floats(0, 1), warm=st.floats(0, 1))
def test_epsilon_schedule_monotone_and_bounded(total, max_eps, warm):
    values = [epsilon_schedule(e, total, max_eps, warm) for e in range(total + 1)]
    assert all(0.0 <= v <= max_eps for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_scheduler_advance_saturates():
    sched = Scheduler(4, 0.1, 0.5, {}, {}, 0.9)
    seen = []
    for _ in range(6):
        seen.append(sched.current())
        sched.advance()
    assert seen == [0.0, 0.05, 0.1, 0.1, 0.1, 0.1]


# --- rollouts ----------------------------------------------------------------------

def test_streams_are_independent_and_reproducible():
    a, b = make_streams(7), make_streams(7)
    for name in a:
        assert a[name].random() == b[name].random()
    draws = {name: g.random() for name, g in make_streams(7).items()}
    assert len(set(draws.values())) == len(draws)


def test_collect_rollouts_layout():
    spec = envs.make_spec("run", episode_len=5)
    streams = make_streams(0)
    agent = build_agent(TINY, spec, streams["init"])
    batch = collect_rollouts(spec, agent, 3, streams)
    assert len(batch) == 15
    np.testing.assert_array_equal(np.flatnonzero(batch.episode_ends), [4, 9, 14])
    np.testing.assert_array_equal(batch.obs, batch.true_obs)
    # within an episode the next observation is the following row
    np.testing.assert_array_equal(batch.next_true_obs[:4], batch.true_obs[1:5])
    np.testing.assert_allclose(batch.logp, agent.policy.log_prob(batch.obs, batch.actions),
                               atol=1e-10)


def test_collect_rollouts_under_attack_stays_in_ball():
    spec = envs.make_spec("run", episode_len=5)
    streams = make_streams(1)
    agent = build_agent(TINY, spec, streams["init"])
    attacker = Attacker("random", AttackConfig(epsilon=0.05), agent.policy)
    batch = collect_rollouts(spec, agent, 2, streams, attacker)
    gap = np.abs(batch.obs - batch.true_obs)
    assert gap.max() <= 0.05 + 1e-12 and gap.max() > 0


# --- training loop -------------------------------------------------------------------

def streams_equal(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert json.dumps(x, sort_keys=True) == json.dumps(y, sort_keys=True)


def test_attacker_none_reproduces_vanilla_bitwise():
    vanilla = train_ppol(TINY)
    adv = adversarial_train(TINY.replace(attacker="none"))
    streams_equal(vanilla.metrics, adv.metrics)
    for a, b in zip(vanilla.agent.policy.params(), adv.agent.policy.params()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic():
    cfg = TINY.replace(attacker="mc")
    streams_equal(adversarial_train(cfg).metrics, adversarial_train(cfg).metrics)


def test_adv_training_ramps_epsilon():
    result = adversarial_train(TINY.replace(attacker="mr", epochs=4, epsilon=0.04))
    assert [m["eps_current"] for m in result.metrics] == pytest.approx([0.0, 0.02, 0.04, 0.04])


def test_adv_training_rejects_unsupported_attacker():
    with pytest.raises(ValueError):
        adversarial_train(TINY.replace(attacker="mad"))
    with pytest.raises(ValueError):
        run_training(TINY, "trpo")


def test_random_and_corrupted_critic_variants_run():
    for cfg in (TINY.replace(attacker="random"), TINY.replace(attacker="mc", critic_obs="corrupted")):
        result = adversarial_train(cfg)
        assert all(np.isfinite(m["q_loss_c"]) for m in result.metrics)


def test_training_outputs(tmp_path):
    result = train_ppol(TINY, tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == TINY.epochs
    row = json.loads(lines[0])
    for key in ("epoch", "reward_mean", "cost_mean", "lambda", "kl", "eps_current"):
        assert key in row
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["method"] == "ppol" and cfg["env"]["episode_len"] == 20
    assert (tmp_path / "checkpoint.json").exists()
    assert all(m["lambda"] >= 0 for m in result.metrics)
