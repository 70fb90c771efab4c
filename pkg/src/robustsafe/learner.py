"""PPO-Lagrangian with a PID-controlled multiplier.

Losses return ``(value, grads)`` where ``grads`` mirrors ``policy.params()`` so
they can be fed straight into :class:`robustsafe.nn.Adam`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .nn import Adam, CriticNet, GaussianPolicyNet


class TrainingFault(RuntimeError):
    """A loss or gradient went non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    # environment and budget
    task: str = "run"
    env_overrides: dict = field(default_factory=dict)
    epochs: int = 100
    batch_size: int = 40000
    minibatch_size: int = 300
    seed: int = 0
    # PPO-Lagrangian
    gamma: float = 0.995
    gae_lambda: float = 0.97
    clip: float = 0.02
    actor_steps: int = 80
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    value_steps: int = 80
    target_kl: float = 0.01
    kl_stop_factor: float = 4.0
    cost_limit: float = 5.0
    kp: float = 0.1
    ki: float = 0.003
    kd: float = 0.001
    lambda_max: float = 1e3
    hidden: tuple = (128, 128)
    init_log_std: float = -0.5
    # off-policy Q critics (used by the critic-guided attackers)
    q_steps: int = 80
    q_batch: int = 256
    polyak: float = 0.995
    buffer_capacity: int = 100_000
    critic_obs: str = "true"
    # adversary schedule
    attacker: str = "none"
    epsilon: float = 0.05
    warmup_frac: float = 0.5
    attack: dict = field(default_factory=dict)
    # state-adversarial regulariser
    beta_kl: float = 0.0
    sa_adversary: str = "mad"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not 0.0 <= self.gamma < 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma must lie in [0, 1) and gae_lambda in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and batch sizes must be positive")
        if self.critic_obs not in ("true", "corrupted"):
            raise ValueError("critic_obs must be 'true' or 'corrupted'")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be nonnegative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


# Desk-scale budget for the point-mass Run task. The wider clip and smaller
# initial exploration noise let the policy settle near the speed limit within
# 30 epochs; Adam makes the critic-guided attacks cheap enough to train against.
SMOKE_OVERRIDES = {"epochs": 30, "batch_size": 4000, "clip": 0.2, "init_log_std": -1.0,
                   "attack": {"optimizer": "adam"}}


def smoke_config(**changes) -> TrainConfig:
    return TrainConfig(**{**SMOKE_OVERRIDES, **changes})


@dataclass
class RolloutBatch:
    """Flat, episode-major arrays. ``obs`` is what the agent saw (possibly corrupted)."""

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    v_r: np.ndarray
    v_c: np.ndarray
    episode_ends: np.ndarray          # True on the last step of each episode
    true_obs: np.ndarray | None = None
    next_true_obs: np.ndarray | None = None
    next_obs: np.ndarray | None = None
    adv_r: np.ndarray | None = None
    adv_c: np.ndarray | None = None
    ret_r: np.ndarray | None = None
    ret_c: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.obs)
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and len(value) != n:
                raise ValueError(f"field {f.name} has length {len(value)}, expected {n}")
        if not np.all(np.isfinite(self.logp)):
            raise ValueError("old log-probabilities must be finite")

    def __len__(self) -> int:
        return len(self.obs)

    def subset(self, idx) -> "RolloutBatch":
        kw = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx])
              for f in fields(self)}
        return RolloutBatch(**kw)

    def episode_returns(self) -> tuple[np.ndarray, np.ndarray]:
        """Undiscounted reward and cost totals per completed episode."""
        ends = np.flatnonzero(self.episode_ends)
        starts = np.concatenate([[0], ends[:-1] + 1])
        r = np.array([self.rewards[a:b + 1].sum() for a, b in zip(starts, ends)])
        c = np.array([self.costs[a:b + 1].sum() for a, b in zip(starts, ends)])
        return r, c


@dataclass(frozen=True)
class LagrangeState:
    lam: float = 0.0
    integral: float = 0.0
    prev_error: float = 0.0
    kp: float = 0.1
    ki: float = 0.003
    kd: float = 0.001
    lambda_max: float = 1e3


# --- advantages ----------------------------------------------------------------

def compute_gae(signal, values, gamma: float, gae_lambda: float, episode_ends=None,
                bootstrap=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-episode GAE. Returns raw ``(advantages, returns)`` with ``returns = adv + values``.

    ``episode_ends`` marks the final step of each episode (default: one episode).
    ``bootstrap`` gives the value after each episode's last step (default 0,
    i.e. the episode end is terminal).
    """
    signal = np.asarray(signal, dtype=float)
    values = np.asarray(values, dtype=float)
    if signal.shape != values.shape or signal.ndim != 1:
        raise ValueError("signal and values must be aligned 1-D arrays")
    n = signal.size
    ends = np.zeros(n, dtype=bool) if episode_ends is None else np.asarray(episode_ends, dtype=bool)
    if ends.shape != (n,):
        raise ValueError("episode_ends must align with the signal")
    if n:
        ends = ends.copy()
        ends[-1] = True
    n_eps = int(ends.sum())
    boot = np.zeros(n_eps) if bootstrap is None else np.asarray(bootstrap, dtype=float).reshape(n_eps)
    adv = np.empty(n)
    ep = n_eps
    gae, next_value = 0.0, 0.0
    for t in range(n - 1, -1, -1):
        if ends[t]:
            ep -= 1
            gae, next_value = 0.0, boot[ep]
        delta = signal[t] + gamma * next_value - values[t]
        gae = delta + gamma * gae_lambda * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-8 else 1.0)


def prepare_batch(batch: RolloutBatch, cfg: TrainConfig) -> RolloutBatch:
    adv_r, ret_r = compute_gae(batch.rewards, batch.v_r, cfg.gamma, cfg.gae_lambda, batch.episode_ends)
    adv_c, ret_c = compute_gae(batch.costs, batch.v_c, cfg.gamma, cfg.gae_lambda, batch.episode_ends)
    return replace(batch, adv_r=normalize(adv_r), adv_c=normalize(adv_c), ret_r=ret_r, ret_c=ret_c)


# --- losses --------------------------------------------------------------------

def _surrogates(batch: RolloutBatch, policy: GaussianPolicyNet, clip: float):
    """Clipped reward surrogate and unclipped cost surrogate with d/d logp weights."""
    logp = policy.log_prob(batch.obs, batch.actions)
    ratio = np.exp(logp - batch.logp)
    if not np.all(np.isfinite(ratio)):
        raise TrainingFault("non-finite probability ratio")
    n = len(batch)
    a_r = batch.adv_r
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_wins = ratio * a_r <= clipped * a_r
    surr_r = np.where(unclipped_wins, ratio * a_r, clipped * a_r).mean()
    d_r = np.where(unclipped_wins, ratio * a_r, 0.0) / n
    surr_c = d_c = None
    if batch.adv_c is not None:
        surr_c = (ratio * batch.adv_c).mean()
        d_c = ratio * batch.adv_c / n
    return surr_r, d_r, surr_c, d_c, logp


def ppo_clip_loss(batch: RolloutBatch, policy: GaussianPolicyNet, clip: float):
    """Negated clipped surrogate on ``batch.adv_r`` and its parameter gradients."""
    surr_r, d_r, _, _, _ = _surrogates(batch, policy, clip)
    grads, _, _ = policy.log_prob_grad(batch.obs, batch.actions, -d_r)
    return -surr_r, grads


def ppol_loss(batch: RolloutBatch, policy: GaussianPolicyNet, lagrange: LagrangeState | float,
              clip: float):
    """``-(r_surr - lam * c_surr) / (1 + lam)``; reduces to :func:`ppo_clip_loss` at ``lam = 0``."""
    lam = lagrange.lam if isinstance(lagrange, LagrangeState) else float(lagrange)
    surr_r, d_r, surr_c, d_c, _ = _surrogates(batch, policy, clip)
    scale = 1.0 / (1.0 + lam)
    loss = -(scale * (surr_r - lam * surr_c))
    weights = -(scale * (d_r - lam * d_c))
    grads, _, _ = policy.log_prob_grad(batch.obs, batch.actions, weights)
    return loss, grads


def approx_kl(batch: RolloutBatch, policy: GaussianPolicyNet) -> float:
    return float(np.mean(batch.logp - policy.log_prob(batch.obs, batch.actions)))


# --- multiplier ----------------------------------------------------------------

def pid_update(lagrange: LagrangeState, measured_cost_return: float, kappa: float) -> LagrangeState:
    """One PID step on the constraint error; the integral is kept nonnegative."""
    e = float(measured_cost_return) - float(kappa)
    integral = max(0.0, lagrange.integral + e)
    raw = lagrange.kp * e + lagrange.ki * integral + lagrange.kd * (e - lagrange.prev_error)
    lam = min(max(raw, 0.0), lagrange.lambda_max)
    return replace(lagrange, lam=lam, integral=integral, prev_error=e)


# --- updates -------------------------------------------------------------------

@dataclass
class UpdateInfo:
    steps: int
    kl: float
    loss: float
    stopped_early: bool
    aborted: bool = False


def _add(grads, extra, weight=1.0):
    return [g + weight * e for g, e in zip(grads, extra)]


def update_policy(batch: RolloutBatch, policy: GaussianPolicyNet, lagrange: LagrangeState,
                  cfg: TrainConfig, optimizer: Adam, rng: np.random.Generator,
                  extra_loss=None) -> UpdateInfo:
    """Up to ``actor_steps`` minibatch steps on the PPO-Lagrangian loss.

    ``extra_loss(policy, idx)`` may return an additional ``(loss, grads)`` on the
    same minibatch (used by the state-adversarial regulariser). Stops once the
    approximate KL to the rollout policy exceeds ``kl_stop_factor * target_kl``.
    A non-finite loss restores the pre-update parameters.
    """
    snapshot = [p.copy() for p in policy.params()]
    n = len(batch)
    size = min(cfg.minibatch_size, n)
    kl, loss, steps = 0.0, 0.0, 0
    try:
        for steps in range(1, cfg.actor_steps + 1):
            idx = rng.choice(n, size=size, replace=False)
            loss, grads = ppol_loss(batch.subset(idx), policy, lagrange, cfg.clip)
            if extra_loss is not None:
                e_loss, e_grads = extra_loss(policy, idx)
                loss, grads = loss + e_loss, _add(grads, e_grads)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingFault("non-finite policy loss")
            optimizer.step(grads)
            policy.clamp()
            kl = approx_kl(batch, policy)
            if kl > cfg.kl_stop_factor * cfg.target_kl:
                return UpdateInfo(steps, kl, float(loss), True)
    except TrainingFault:
        for p, s in zip(policy.params(), snapshot):
            p[...] = s
        return UpdateInfo(steps, float("nan"), float("nan"), False, aborted=True)
    return UpdateInfo(steps, kl, float(loss), False)


def value_loss(critic: CriticNet, obs, targets):
    """Mean squared error of a state-value head, with parameter gradients."""
    pred, cache = critic.forward(obs)
    diff = pred[:, 0] - targets
    grads, _, _ = critic.backward(cache, 2.0 * diff / len(diff))
    return float(np.mean(diff**2)), grads


def update_value(critic: CriticNet, optimizer: Adam, obs, targets, cfg: TrainConfig,
                 rng: np.random.Generator) -> float:
    n = len(obs)
    size = min(cfg.minibatch_size, n)
    loss = 0.0
    for _ in range(cfg.value_steps):
        idx = rng.choice(n, size=size, replace=False)
        loss, grads = value_loss(critic, obs[idx], targets[idx])
        optimizer.step(grads)
    return loss
