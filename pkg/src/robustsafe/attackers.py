"""Observation attackers restricted to the l_inf ball around the true observation.

Every attacker is batched: ``s`` is ``[N, obs_dim]`` (a single vector is also
accepted) and each row is optimised independently, including its early stop.

Networks are duck-typed. A policy needs ``mean(obs)``, ``mean_vjp(obs, g)`` and
``std``; a Q critic needs ``value(obs, act)`` and ``grad_action(obs, act)``; a
state-value critic needs ``value(obs)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ATTACKS = ("none", "random", "mad", "amad", "mc", "mr", "mixed", "min_reward")
BALL_TOL = 1e-12
OPTIMIZERS = ("sgd", "adam")
ADAM_BETAS = (0.9, 0.999)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.05
    steps: int = 200          # budget for the critic-guided attacks
    mad_steps: int = 60
    lr: float = 0.05
    sgld_beta: float = 1e7
    eps_q: float = 1e-4
    eps_s: float = 1e-4
    amad_xi: float = 0.1
    mix_weight: float = 0.5
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 1 or self.mad_steps < 1:
            raise ValueError("step budgets must be at least 1")
        if self.lr <= 0 or self.sgld_beta <= 0:
            raise ValueError("lr and sgld_beta must be positive")
        if not 0.0 <= self.amad_xi <= 1.0 or not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("amad_xi and mix_weight must lie in [0, 1]")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def replace(self, **changes) -> "AttackConfig":
        return replace(self, **changes)


@dataclass
class Corruption:
    original: np.ndarray      # [N, d]
    corrupted: np.ndarray     # [N, d]
    iterations: np.ndarray    # [N] steps taken per row
    trace: np.ndarray         # [steps + 1, N] attacker objective (to be maximised)
    failed: np.ndarray        # [N] True where a non-finite gradient aborted the row

    def linf(self) -> np.ndarray:
        return np.max(np.abs(self.corrupted - self.original), axis=-1)


def _batch(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return s[None, :] if s.ndim == 1 else s


def project(s: np.ndarray, s0: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(s, s0 - epsilon, s0 + epsilon)


def _identity(s0: np.ndarray, trace_rows: int = 1) -> Corruption:
    n = s0.shape[0]
    return Corruption(s0.copy(), s0.copy(), np.zeros(n, dtype=int), np.zeros((trace_rows, n)),
                      np.zeros(n, dtype=bool))


def random_attack(s, cfg: AttackConfig, rng: np.random.Generator) -> Corruption:
    s0 = _batch(s)
    noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=s0.shape)
    out = _identity(s0)
    out.corrupted = project(s0 + noise, s0, cfg.epsilon)
    return out


def _policy_mean(policy, x):
    """Mean actions and a vector-Jacobian closure; falls back to separate calls."""
    fused = getattr(policy, "mean_with_vjp", None)
    if fused is not None:
        return fused(x)
    return policy.mean(x), lambda g: policy.mean_vjp(x, g)


def _q_value_grad(q, s0, act):
    fused = getattr(q, "value_and_grad_action", None)
    if fused is not None:
        return fused(s0, act)
    return q.value(s0, act), q.grad_action(s0, act)


def _ascend(s0, evaluate, cfg: AttackConfig, steps: int, start=None, noise=None) -> Corruption:
    """Projected ascent with per-row early stopping.

    ``evaluate(s)`` returns the objective and its gradient for the whole batch;
    ``noise(k)`` (optional) perturbs the step direction. With
    ``cfg.optimizer == "adam"`` the raw gradient is replaced by Adam's
    bias-corrected moment ratio, which makes the step size scale-free.
    """
    n = s0.shape[0]
    s = s0.copy() if start is None else start.copy()
    value, g = evaluate(s)
    trace = np.empty((steps + 1, n))
    trace[0] = value
    active = np.ones(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=int)
    m = np.zeros_like(s)
    v = np.zeros_like(s)
    for k in range(steps):
        if noise is not None:
            g = g + noise(k)
        bad = active & ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            failed |= bad
            active &= ~bad
            s[bad] = s0[bad]
            g = np.where(bad[:, None], 0.0, g)
        if cfg.optimizer == "adam":
            m = ADAM_BETAS[0] * m + (1.0 - ADAM_BETAS[0]) * g
            v = ADAM_BETAS[1] * v + (1.0 - ADAM_BETAS[1]) * g * g
            m_hat = m / (1.0 - ADAM_BETAS[0] ** (k + 1))
            v_hat = v / (1.0 - ADAM_BETAS[1] ** (k + 1))
            direction = m_hat / (np.sqrt(v_hat) + 1e-8)
        else:
            direction = g
        new_s = project(s + cfg.lr * np.where(active[:, None], direction, 0.0), s0, cfg.epsilon)
        new_value, new_g = evaluate(new_s)
        iterations += active
        converged = (np.abs(new_value - value) < cfg.eps_q) & (
            np.max(np.abs(new_s - s), axis=1) < cfg.eps_s)
        s = np.where(active[:, None], new_s, s)
        value = np.where(active, new_value, value)
        g = new_g
        trace[k + 1] = value
        active &= ~converged
        if not active.any():
            trace[k + 2:] = value
            break
    return Corruption(s0.copy(), s, iterations, trace, failed)


def _critic_attack(s, policy, critics, weights, cfg: AttackConfig) -> Corruption:
    """Ascent on ``sum_i w_i Q_i(s0, mean(s))``, gradient taken with the first argument frozen at s0."""
    s0 = _batch(s)
    if cfg.epsilon == 0.0:
        return _identity(s0, cfg.steps + 1)

    def evaluate(x):
        act, vjp = _policy_mean(policy, x)
        value, g_act = 0.0, 0.0
        for w, q in zip(weights, critics):
            q_val, q_grad = _q_value_grad(q, s0, act)
            value = value + w * q_val
            g_act = g_act + w * q_grad
        return value, vjp(g_act)

    return _ascend(s0, evaluate, cfg, cfg.steps)


def mc_mr_attack(s, policy, q_net, cfg: AttackConfig) -> Corruption:
    """Maximise the critic's value through the policy: MC with ``Q_c``, MR with ``Q_r``."""
    return _critic_attack(s, policy, (q_net,), (1.0,), cfg)


def mixed_attack(s, policy, q_r, q_c, cfg: AttackConfig) -> Corruption:
    w = cfg.mix_weight
    return _critic_attack(s, policy, (q_c, q_r), (w, 1.0 - w), cfg)


def min_reward_attack(s, policy, q_r, cfg: AttackConfig) -> Corruption:
    return _critic_attack(s, policy, (q_r,), (-1.0,), cfg)


def mad_attack(s, policy, cfg: AttackConfig, rng: np.random.Generator) -> Corruption:
    """Maximise ``KL(pi(.|s0) || pi(.|s))`` by Langevin ascent from a uniform start in the ball.

    The divergence has zero gradient at ``s0`` itself, hence the random start.
    """
    s0 = _batch(s)
    if cfg.epsilon == 0.0:
        return _identity(s0, cfg.mad_steps + 1)
    var = policy.std ** 2
    mu0 = policy.mean(s0)
    start = project(s0 + rng.uniform(-cfg.epsilon, cfg.epsilon, size=s0.shape), s0, cfg.epsilon)
    noise_scale = np.sqrt(2.0 / (cfg.sgld_beta * cfg.lr))

    def evaluate(x):
        mu, vjp = _policy_mean(policy, x)
        diff = mu - mu0
        return np.sum(diff**2 / (2.0 * var), axis=-1), vjp(diff / var)

    def noise(k):
        return noise_scale * rng.standard_normal(s0.shape)

    return _ascend(s0, evaluate, cfg, cfg.mad_steps, start=start, noise=noise)


def amad_threshold(values, xi: float) -> float:
    """The ``(1 - xi)`` percentile of ``values``; ``xi = 0`` attacks nothing."""
    if xi <= 0.0:
        return np.inf
    return float(np.percentile(np.asarray(values, dtype=float), 100.0 * (1.0 - xi)))


def amad_attack(batch_states, policy, v_c_net, cfg: AttackConfig, rng: np.random.Generator,
                threshold: float | None = None) -> Corruption:
    """MAD applied only to rows whose cost value reaches the high-risk threshold.

    The threshold defaults to the batch percentile; pass one calibrated on a
    reference set of states to use a fixed cut-off instead.
    """
    s0 = _batch(batch_states)
    if s0.shape[0] == 0:
        raise ValueError("amad_attack needs a nonempty batch")
    values = v_c_net.value(s0)
    if threshold is None:
        threshold = amad_threshold(values, cfg.amad_xi)
    mask = values >= threshold
    out = _identity(s0, cfg.mad_steps + 1)
    if mask.any():
        sub = mad_attack(s0[mask], policy, cfg, rng)
        out.corrupted[mask] = sub.corrupted
        out.iterations[mask] = sub.iterations
        out.trace[:, mask] = sub.trace
        out.failed[mask] = sub.failed
    return out


class Attacker:
    """Named attacker bound to its networks; ``attacker(obs, rng)`` returns corrupted observations.

    ``critics`` maps ``"q_r"``, ``"q_c"`` and ``"v_c"`` to live networks and is
    read at call time, so swapping a critic in the dict takes effect immediately.
    """

    def __init__(self, name: str, cfg: AttackConfig, policy, critics: dict | None = None,
                 amad_threshold_value: float | None = None):
        if name not in ATTACKS:
            raise ValueError(f"unknown attacker {name!r}; expected one of {ATTACKS}")
        self.name, self.cfg, self.policy = name, cfg, policy
        self.critics = critics if critics is not None else {}
        self.threshold = amad_threshold_value
        needs = {"mc": ("q_c",), "mr": ("q_r",), "mixed": ("q_r", "q_c"),
                 "min_reward": ("q_r",), "amad": ("v_c",)}.get(name, ())
        missing = [k for k in needs if k not in self.critics]
        if missing:
            raise ValueError(f"attacker {name!r} needs critics {missing}")

    def corrupt(self, obs, rng: np.random.Generator) -> Corruption:
        c, cfg, pol = self.critics, self.cfg, self.policy
        if self.name == "none" or cfg.epsilon == 0.0:
            return _identity(_batch(obs))
        if self.name == "random":
            return random_attack(obs, cfg, rng)
        if self.name == "mad":
            return mad_attack(obs, pol, cfg, rng)
        if self.name == "amad":
            return amad_attack(obs, pol, c["v_c"], cfg, rng, self.threshold)
        if self.name == "mc":
            return mc_mr_attack(obs, pol, c["q_c"], cfg)
        if self.name == "mr":
            return mc_mr_attack(obs, pol, c["q_r"], cfg)
        if self.name == "mixed":
            return mixed_attack(obs, pol, c["q_r"], c["q_c"], cfg)
        return min_reward_attack(obs, pol, c["q_r"], cfg)

    def __call__(self, obs, rng: np.random.Generator) -> np.ndarray:
        return self.corrupt(obs, rng).corrupted
