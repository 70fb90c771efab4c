import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustsafe.attackers import (
    ATTACKS,
    AttackConfig,
    Attacker,
    amad_attack,
    amad_threshold,
    mad_attack,
    mc_mr_attack,
    min_reward_attack,
    mixed_attack,
    random_attack,
)
from robustsafe.nn import CriticNet, GaussianPolicyNet


class LinearPolicy:
    """mean(s) = s @ W.T + b with a fixed std."""

    def __init__(self, W, b=None, std=1.0):
        self.W = np.atleast_2d(np.asarray(W, float))
        self.b = np.zeros(self.W.shape[0]) if b is None else np.asarray(b, float)
        self.std = np.full(self.W.shape[0], float(std))

    def mean(self, s):
        return np.atleast_2d(s) @ self.W.T + self.b

    def mean_vjp(self, s, g):
        return np.atleast_2d(g) @ self.W


def identity_policy(d, std=1.0):
    return LinearPolicy(np.eye(d), std=std)


class QuadraticQ:
    """Q(s0, a) = -||a - a*||^2, concave in the action."""

    def __init__(self, target):
        self.target = np.asarray(target, float)

    def value(self, s0, a):
        return -np.sum((np.atleast_2d(a) - self.target) ** 2, axis=-1)

    def grad_action(self, s0, a):
        return -2.0 * (np.atleast_2d(a) - self.target)


class ConstantQ:
    def value(self, s0, a):
        return np.full(np.atleast_2d(a).shape[0], 3.0)

    def grad_action(self, s0, a):
        return np.zeros_like(np.atleast_2d(a))


class NanQ(ConstantQ):
    def grad_action(self, s0, a):
        return np.full_like(np.atleast_2d(a), np.nan)


class FirstCoordinate:
    def value(self, s):
        return np.atleast_2d(s)[:, 0]


def in_ball(c, eps):
    return np.all(c.linf() <= eps + 1e-12)


CFG = AttackConfig(epsilon=0.1)
EXACT = CFG.replace(eps_q=0.0, eps_s=0.0, steps=400)
# On -||a - a*||^2 each step shrinks the gap by 2 * lr, so stopping once the step
# is below eps_s leaves a residual of at most eps_s / (2 * lr).
STOP_RESIDUAL = CFG.eps_s / (2 * CFG.lr)


# --- config --------------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(epsilon=-1), dict(steps=0), dict(lr=0), dict(amad_xi=1.5),
                                 dict(mix_weight=-0.1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        AttackConfig(**bad)


# --- random --------------------------------------------------------------------

def test_random_zero_eps_identity():
    s = np.array([[0.3, -1.0, 2.0]])
    c = random_attack(s, AttackConfig(epsilon=0.0), np.random.default_rng(0))
    assert np.array_equal(c.corrupted, s)


def test_random_uniform_statistics_and_ball():
    eps = 0.2
    s = np.array([1.0, -2.0, 0.5])
    c = random_attack(np.tile(s, (10**5, 1)), AttackConfig(epsilon=eps), np.random.default_rng(1))
    se = eps / np.sqrt(3.0) / np.sqrt(10**5)
    assert np.all(np.abs(c.corrupted.mean(axis=0) - s) <= 4 * se)
    assert in_ball(c, eps)


# --- MC / MR -------------------------------------------------------------------

def test_mc_zero_eps_identity():
    s = np.array([[0.2, 0.4]])
    c = mc_mr_attack(s, identity_policy(2), QuadraticQ([5.0, 5.0]), AttackConfig(epsilon=0.0, steps=7))
    assert np.array_equal(c.corrupted, s)


@pytest.mark.parametrize("seed", range(5))
def test_mc_quadratic_reaches_clamped_target(seed):
    rng = np.random.default_rng(seed)
    s0 = rng.normal(size=(4, 3))
    target = rng.normal(scale=0.3, size=3)
    expected = np.clip(target, s0 - CFG.epsilon, s0 + CFG.epsilon)
    c = mc_mr_attack(s0, identity_policy(3), QuadraticQ(target), CFG)
    assert np.all(np.abs(c.corrupted - expected) <= STOP_RESIDUAL)
    assert in_ball(c, CFG.epsilon)
    exact = mc_mr_attack(s0, identity_policy(3), QuadraticQ(target), EXACT)
    assert np.allclose(exact.corrupted, expected, atol=1e-12)


def test_mc_constant_q_stops_after_one_step():
    s0 = np.array([[0.1, 0.2], [0.3, -0.4]])
    c = mc_mr_attack(s0, identity_policy(2), ConstantQ(), CFG)
    assert np.array_equal(c.iterations, [1, 1])
    assert np.array_equal(c.corrupted, s0)
    assert np.all(c.trace == 3.0)


def test_mc_non_finite_gradient_flags_failure():
    s0 = np.array([[0.1, 0.2]])
    c = mc_mr_attack(s0, identity_policy(2), NanQ(), CFG)
    assert c.failed.all() and np.array_equal(c.corrupted, s0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.lists(st.floats(-2, 2), min_size=2, max_size=2),
       st.floats(0.0, 0.5))
def test_mc_trace_monotone_on_concave(s0, target, eps):
    c = mc_mr_attack(np.array([s0]), identity_policy(2), QuadraticQ(target),
                     AttackConfig(epsilon=eps, steps=50))
    assert np.all(np.diff(c.trace[:, 0]) >= -1e-12)
    assert in_ball(c, eps)


def test_mc_gradient_taken_at_original_state():
    """Q depends on its state argument; the attack must keep it frozen at s0."""

    class StateShiftedQ(QuadraticQ):
        def value(self, s0, a):
            return super().value(s0, np.atleast_2d(a) - s0)

        def grad_action(self, s0, a):
            return super().grad_action(s0, np.atleast_2d(a) - s0)

    s0 = np.array([[0.0, 0.0]])
    c = mc_mr_attack(s0, identity_policy(2), StateShiftedQ([0.05, -0.02]), EXACT)
    assert np.allclose(c.corrupted, [[0.05, -0.02]], atol=1e-12)


def test_mc_with_real_networks_increases_q():
    rng = np.random.default_rng(3)
    pol = GaussianPolicyNet(4, 2, (16, 16), rng)
    pol.mean_net.weights[-1] *= 100
    q = CriticNet(4, 2, (16, 16), rng)
    s0 = rng.normal(size=(8, 4))
    c = mc_mr_attack(s0, pol, q, AttackConfig(epsilon=0.1))
    assert np.all(c.trace[-1] >= c.trace[0] - 1e-12)
    assert np.any(c.trace[-1] > c.trace[0] + 1e-6)
    assert in_ball(c, 0.1)


# --- mixed / min reward --------------------------------------------------------

def test_mixed_degenerate_weights_bitwise():
    rng = np.random.default_rng(0)
    pol = GaussianPolicyNet(3, 2, (8,), rng)
    pol.mean_net.weights[-1] *= 100
    q_r, q_c = CriticNet(3, 2, (8,), rng), CriticNet(3, 2, (8,), rng)
    s0 = rng.normal(size=(5, 3))
    mc = mc_mr_attack(s0, pol, q_c, CFG)
    mr = mc_mr_attack(s0, pol, q_r, CFG)
    w1 = mixed_attack(s0, pol, q_r, q_c, CFG.replace(mix_weight=1.0))
    w0 = mixed_attack(s0, pol, q_r, q_c, CFG.replace(mix_weight=0.0))
    assert np.array_equal(w1.corrupted, mc.corrupted) and np.array_equal(w1.trace, mc.trace)
    assert np.array_equal(w0.corrupted, mr.corrupted) and np.array_equal(w0.trace, mr.trace)


def test_mixed_half_weight_closed_form():
    s0 = np.array([[0.0, 0.0, 0.0]])
    t_c, t_r = np.array([0.3, -0.02, 0.04]), np.array([-0.1, 0.06, 0.2])
    c = mixed_attack(s0, identity_policy(3), QuadraticQ(t_r), QuadraticQ(t_c), EXACT.replace(mix_weight=0.5))
    assert np.allclose(c.corrupted, np.clip((t_c + t_r) / 2, -0.1, 0.1), atol=1e-12)


def test_min_reward_zero_eps_identity():
    s = np.array([[0.5, 0.5]])
    c = min_reward_attack(s, identity_policy(2), QuadraticQ([1, 1]), AttackConfig(epsilon=0.0))
    assert np.array_equal(c.corrupted, s)


def test_min_reward_goes_to_far_corner():
    s0 = np.array([[0.0, 0.0]])
    target = np.array([0.03, -0.01])
    c = min_reward_attack(s0, identity_policy(2), QuadraticQ(target), CFG)
    assert np.allclose(c.corrupted, [[-0.1, 0.1]], atol=1e-9)


# --- MAD / AMAD ----------------------------------------------------------------

def test_mad_zero_eps_identity():
    s = np.array([[0.5, 0.5]])
    c = mad_attack(s, identity_policy(2), AttackConfig(epsilon=0.0), np.random.default_rng(0))
    assert np.array_equal(c.corrupted, s)


def test_mad_state_independent_policy():
    pol = LinearPolicy(np.zeros((2, 3)))
    s0 = np.random.default_rng(0).normal(size=(6, 3))
    c = mad_attack(s0, pol, CFG, np.random.default_rng(1))
    assert np.all(c.trace == 0.0)
    assert in_ball(c, CFG.epsilon)


@pytest.mark.parametrize("seed", range(5))
def test_mad_linear_policy_reaches_ball_face(seed):
    w, sigma, eps = 1.7, 0.2, 0.1
    pol = LinearPolicy([[w]], std=sigma)
    s0 = np.array([[0.4]])
    c = mad_attack(s0, pol, AttackConfig(epsilon=eps, sgld_beta=1e12), np.random.default_rng(seed))
    grid = np.linspace(s0[0, 0] - eps, s0[0, 0] + eps, 2001)
    kl_grid = (w * (grid - s0[0, 0])) ** 2 / (2 * sigma**2)
    assert abs(c.corrupted[0, 0] - s0[0, 0]) == pytest.approx(eps, abs=1e-9)
    assert c.trace[-1, 0] == pytest.approx(kl_grid.max(), rel=1e-6)


def test_mad_seeded_reproducible():
    pol = identity_policy(2, std=0.3)
    s0 = np.array([[0.1, 0.2], [0.0, -1.0]])
    a = mad_attack(s0, pol, CFG, np.random.default_rng(4))
    b = mad_attack(s0, pol, CFG, np.random.default_rng(4))
    assert np.array_equal(a.corrupted, b.corrupted)


def test_amad_xi_zero_attacks_nothing():
    s0 = np.random.default_rng(0).normal(size=(10, 2))
    c = amad_attack(s0, identity_policy(2, 0.3), FirstCoordinate(), CFG.replace(amad_xi=0.0),
                    np.random.default_rng(0))
    assert np.array_equal(c.corrupted, s0)


def test_amad_xi_one_is_mad():
    s0 = np.random.default_rng(0).normal(size=(10, 2))
    pol = identity_policy(2, 0.3)
    c = amad_attack(s0, pol, FirstCoordinate(), CFG.replace(amad_xi=1.0), np.random.default_rng(5))
    m = mad_attack(s0, pol, CFG, np.random.default_rng(5))
    assert np.array_equal(c.corrupted, m.corrupted)


def test_amad_top_decile_only():
    s0 = np.random.default_rng(0).normal(size=(10, 2))
    c = amad_attack(s0, identity_policy(2, 0.3), FirstCoordinate(), CFG, np.random.default_rng(0))
    changed = np.flatnonzero(np.any(c.corrupted != s0, axis=1))
    assert changed.tolist() == [int(np.argmax(s0[:, 0]))]


def test_amad_fixed_threshold():
    s0 = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    c = amad_attack(s0, identity_policy(2, 0.3), FirstCoordinate(), CFG, np.random.default_rng(0),
                    threshold=0.5)
    changed = np.any(c.corrupted != s0, axis=1)
    assert changed.tolist() == [False, True, True]


def test_amad_empty_batch():
    with pytest.raises(ValueError):
        amad_attack(np.zeros((0, 2)), identity_policy(2), FirstCoordinate(), CFG, np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.floats(0.01, 1.0))
def test_amad_fraction_matches_xi(n, xi):
    values = np.random.default_rng(n).permutation(n).astype(float)
    count = int(np.sum(values >= amad_threshold(values, xi)))
    assert abs(count - xi * n) <= 1.0


# --- Attacker dispatcher -------------------------------------------------------

def test_attacker_validation():
    with pytest.raises(ValueError):
        Attacker("fgsm", CFG, identity_policy(2))
    with pytest.raises(ValueError):
        Attacker("mc", CFG, identity_policy(2), {"q_r": ConstantQ()})


@pytest.mark.parametrize("name", ATTACKS)
def test_every_attacker_identity_at_zero_eps(name):
    rng = np.random.default_rng(0)
    pol = GaussianPolicyNet(3, 2, (8,), rng)
    critics = {"q_r": CriticNet(3, 2, (8,), rng), "q_c": CriticNet(3, 2, (8,), rng),
               "v_c": CriticNet(3, 0, (8,), rng)}
    s0 = rng.normal(size=(6, 3))
    att = Attacker(name, AttackConfig(epsilon=0.0), pol, critics)
    assert np.array_equal(att(s0, np.random.default_rng(1)), s0)


@pytest.mark.parametrize("name", ATTACKS)
def test_every_attacker_stays_in_ball(name):
    rng = np.random.default_rng(0)
    pol = GaussianPolicyNet(3, 2, (8,), rng)
    pol.mean_net.weights[-1] *= 100
    critics = {"q_r": CriticNet(3, 2, (8,), rng), "q_c": CriticNet(3, 2, (8,), rng),
               "v_c": CriticNet(3, 0, (8,), rng)}
    s0 = rng.normal(size=(20, 3))
    out = Attacker(name, CFG, pol, critics)(s0, np.random.default_rng(2))
    assert np.all(np.abs(out - s0) <= CFG.epsilon + 1e-12)
