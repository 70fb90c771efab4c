"""State-adversarial PPO-Lagrangian (SA-PPOL) and the PPOL-random baseline.

SA-PPOL keeps rollouts clean and adds ``beta * KL(pi(s) || pi_theta(s~))`` to the
PPO-Lagrangian loss, where ``s~`` is produced by an adversary on every
minibatch. The clean branch is treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adv_train import TrainResult, _attack_config, adversarial_train, run_training
from .attackers import Attacker
from .learner import TrainConfig
from .nn import GaussianPolicyNet, ShapeError, gaussian_kl

SA_ADVERSARIES = ("mad", "mc", "mr")


@dataclass(frozen=True)
class SaConfig:
    beta_kl: float = 1.0
    adversary: str = "mad"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be nonnegative")
        if self.adversary not in SA_ADVERSARIES:
            raise ValueError(f"SA adversary must be one of {SA_ADVERSARIES}")

    def resolved(self) -> TrainConfig:
        """The underlying training config with the SA fields filled in."""
        return self.train.replace(beta_kl=self.beta_kl, sa_adversary=self.adversary)


def sa_kl_regularizer(policy: GaussianPolicyNet, states, corrupted):
    """Mean ``KL(pi(.|s) || pi_theta(.|s~))`` with gradients through the corrupted branch only.

    Returns ``(loss, param_grads, grad_states, grad_corrupted)``; ``grad_states``
    is identically zero by construction.
    """
    s = np.atleast_2d(np.asarray(states, dtype=float))
    s_adv = np.atleast_2d(np.asarray(corrupted, dtype=float))
    if s.shape != s_adv.shape:
        raise ShapeError(f"states {s.shape} and corruptions {s_adv.shape} differ")
    n = len(s)
    std = policy.std
    mu_p = policy.mean(s)                       # detached
    mu_q = policy.mean(s_adv)
    loss = float(np.mean(gaussian_kl(mu_p, std, mu_q, std)))
    # d KL / d mu_q = (mu_q - mu_p) / sigma_q^2 ; d KL / d log sigma_q = 1 - (sigma_p^2 + d^2) / sigma_q^2
    diff = mu_q - mu_p
    grads, g_adv = policy.mean_backward(s_adv, diff / std**2 / n)
    grads[-1] = np.mean(1.0 - (std**2 + diff**2) / std**2, axis=0)
    return loss, grads, np.zeros_like(s), g_adv


def sa_extra_loss_factory(cfg: TrainConfig):
    """Per-epoch factory for :func:`run_training`: corrupts each minibatch afresh."""

    def factory(agent, batch, streams):
        def extra_loss(policy, idx):
            attacker = Attacker(cfg.sa_adversary, _attack_config(cfg, cfg.epsilon), policy,
                                agent.critics())
            states = batch.obs[idx]
            loss, grads, _, _ = sa_kl_regularizer(policy, states, attacker(states, streams["attack"]))
            return cfg.beta_kl * loss, [cfg.beta_kl * g for g in grads]
        return extra_loss

    return factory


def sa_ppol_train(cfg: SaConfig | TrainConfig, out_dir=None) -> TrainResult:
    """SA-PPOL: clean rollouts, PPO-Lagrangian loss plus the KL regulariser."""
    train = cfg.resolved() if isinstance(cfg, SaConfig) else cfg
    if train.sa_adversary not in SA_ADVERSARIES:
        raise ValueError(f"SA adversary must be one of {SA_ADVERSARIES}")
    return run_training(train, "sa", out_dir, sa_extra_loss_factory(train))


def ppol_random_train(cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Adversarial training against uniform noise in the epsilon ball."""
    return adversarial_train(cfg.replace(attacker="random"), out_dir)
