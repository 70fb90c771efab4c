import json

import numpy as np
import pytest

from gradcheck import REL_TOL, numeric_grad, rel_err, smooth_draw
from robustsafe.adv_train import adversarial_train, train_ppol
from robustsafe.baselines import SaConfig, ppol_random_train, sa_kl_regularizer, sa_ppol_train
from robustsafe.learner import TrainConfig
from robustsafe.nn import GaussianPolicyNet, ShapeError, gaussian_kl

TINY = TrainConfig(epochs=3, batch_size=60, minibatch_size=20, actor_steps=3, value_steps=3,
                   q_steps=3, q_batch=16, hidden=(8, 8), env_overrides={"episode_len": 20},
                   attack={"steps": 5, "mad_steps": 5})


def linear_policy(w, log_std):
    pol = GaussianPolicyNet(1, 1, (), np.random.default_rng(0), init_log_std=log_std)
    pol.mean_net.weights[0][...] = w
    pol.mean_net.biases[0][...] = 0.3
    return pol


def test_sa_config_validation():
    with pytest.raises(ValueError):
        SaConfig(beta_kl=-0.1)
    with pytest.raises(ValueError):
        SaConfig(adversary="amad")
    cfg = SaConfig(beta_kl=0.5, adversary="mr", train=TINY).resolved()
    assert (cfg.beta_kl, cfg.sa_adversary, cfg.epochs) == (0.5, "mr", 3)


def test_regularizer_zero_without_corruption():
    pol = GaussianPolicyNet(3, 2, (5,), np.random.default_rng(1))
    s = np.random.default_rng(2).normal(size=(7, 3))
    loss, grads, g_s, g_adv = sa_kl_regularizer(pol, s, s.copy())
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads) and np.all(g_adv == 0) and np.all(g_s == 0)


def test_regularizer_zero_for_state_independent_policy():
    pol = GaussianPolicyNet(3, 2, (5,), np.random.default_rng(3))
    pol.mean_net.weights[-1][...] = 0.0
    rng = np.random.default_rng(4)
    s = rng.normal(size=(6, 3))
    loss, _, _, _ = sa_kl_regularizer(pol, s, s + rng.uniform(-1, 1, size=s.shape))
    assert loss == 0.0


@pytest.mark.parametrize("w,delta,log_std", [(2.0, 0.1, 0.0), (-1.5, 0.3, -0.7), (0.4, -0.05, 0.5)])
def test_regularizer_linear_closed_form(w, delta, log_std):
    pol = linear_policy(w, log_std)
    s = np.array([[0.2], [-1.0], [3.0]])
    loss, _, _, _ = sa_kl_regularizer(pol, s, s + delta)
    sigma = np.exp(log_std)
    assert loss == pytest.approx(delta**2 * w**2 / (2 * sigma**2), rel=1e-12)


def test_regularizer_shape_mismatch():
    pol = GaussianPolicyNet(3, 2, (5,), np.random.default_rng(5))
    with pytest.raises(ShapeError):
        sa_kl_regularizer(pol, np.zeros((4, 3)), np.zeros((3, 3)))


@pytest.mark.parametrize("seed", range(20))
def test_regularizer_gradients_through_corrupted_branch_only(seed):
    rng = np.random.default_rng(100 + seed)
    pol = GaussianPolicyNet(3, 2, (6, 6), rng, init_log_std=rng.uniform(-1, 0.5))
    pol.mean_net.weights[-1] *= 60.0
    s = smooth_draw(lambda: rng.normal(size=(8, 3)), pol.mean_net)
    s_adv = smooth_draw(lambda: s + rng.uniform(-0.3, 0.3, size=s.shape), pol.mean_net)
    frozen = pol.copy()
    mu_p, std_p = frozen.mean(s), frozen.std

    def detached():
        return float(np.mean(gaussian_kl(mu_p, std_p, pol.mean(s_adv), pol.std)))

    loss, grads, g_s, g_adv = sa_kl_regularizer(pol, s, s_adv)
    assert loss == pytest.approx(detached(), rel=1e-12)
    for p, g in zip(pol.params(), grads):
        assert rel_err(g, numeric_grad(detached, p)) <= REL_TOL
    assert rel_err(g_adv, numeric_grad(detached, s_adv)) <= REL_TOL
    assert np.all(g_s == 0)


def same_metrics(a, b):
    assert [json.dumps(m, sort_keys=True) for m in a] == [json.dumps(m, sort_keys=True) for m in b]


@pytest.mark.parametrize("adversary", ["mad", "mc"])
def test_sa_beta_zero_reproduces_vanilla(adversary):
    vanilla = train_ppol(TINY)
    sa = sa_ppol_train(SaConfig(beta_kl=0.0, adversary=adversary, train=TINY))
    same_metrics(vanilla.metrics, sa.metrics)


def test_sa_positive_beta_changes_training():
    vanilla = train_ppol(TINY)
    sa = sa_ppol_train(SaConfig(beta_kl=5.0, adversary="mad", train=TINY))
    assert [m["kl"] for m in sa.metrics] != [m["kl"] for m in vanilla.metrics]
    assert all(np.isfinite(m["reward_mean"]) for m in sa.metrics)


def test_ppol_random_is_adversarial_training_with_noise():
    a = ppol_random_train(TINY)
    b = adversarial_train(TINY.replace(attacker="random"))
    same_metrics(a.metrics, b.metrics)
    assert a.metrics[-1]["eps_current"] > 0
