"""Adversarial PPO-Lagrangian training loop and its off-policy Q critics.

One loop serves every method:

* ``ppol``  plain PPO-Lagrangian, clean rollouts;
* ``adv``   rollouts under ``pi o nu`` with an epsilon curriculum (``cfg.attacker``);
* ``sa``    clean rollouts plus a KL smoothness regulariser (see :mod:`robustsafe.baselines`).

Q_r and Q_c are fitted in every method so that any trained policy can later be
attacked by the critic-guided attackers. Randomness is split into independent
streams so that, for instance, attack sampling never shifts minibatch order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .attackers import AttackConfig, Attacker
from .learner import (
    LagrangeState,
    RolloutBatch,
    TrainConfig,
    TrainingFault,
    pid_update,
    prepare_batch,
    update_policy,
    update_value,
)
from .nn import Adam, CriticNet, GaussianPolicyNet, polyak_update, sample_action, save_checkpoint

ADV_ATTACKERS = ("mc", "mr", "random", "none")
STREAMS = ("init", "reset", "action", "minibatch", "critic", "attack")


class ReplayBuffer:
    """Ring buffer of ``(s, a, s', r, c, done)`` transitions."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.rew = np.zeros(capacity)
        self.cost = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, next_obs, rew, cost, done) -> None:
        obs = np.atleast_2d(obs)
        n = len(obs)
        slots = (self.cursor + np.arange(n)) % self.capacity
        self.obs[slots] = obs
        self.act[slots] = np.atleast_2d(act)
        self.next_obs[slots] = np.atleast_2d(next_obs)
        self.rew[slots] = rew
        self.cost[slots] = cost
        self.done[slots] = done
        self.cursor = int((self.cursor + n) % self.capacity)
        self.size = min(self.capacity, self.size + n)

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, rng: np.random.Generator, n: int) -> dict:
        i = self.sample_indices(rng, n)
        return {"obs": self.obs[i], "act": self.act[i], "next_obs": self.next_obs[i],
                "rew": self.rew[i], "cost": self.cost[i], "done": self.done[i]}


def msbe(q_net: CriticNet, q_target: CriticNet, policy: GaussianPolicyNet, sample: dict,
         signal: str, gamma: float, rng: np.random.Generator):
    """Mean-squared Bellman error against the target critic and its parameter gradients."""
    next_act, _ = sample_action(policy, sample["next_obs"], rng)
    f = sample["rew"] if signal == "reward" else sample["cost"]
    target = f + gamma * (1.0 - sample["done"]) * q_target.value(sample["next_obs"], next_act)
    pred, cache = q_net.forward(sample["obs"], sample["act"])
    diff = pred[:, 0] - target
    grads, _, _ = q_net.backward(cache, 2.0 * diff / len(diff))
    return float(np.mean(diff**2)), grads


def critic_update(buffer: ReplayBuffer, q_net: CriticNet, q_target: CriticNet,
                  policy: GaussianPolicyNet, cfg: TrainConfig, optimizer: Adam,
                  rng: np.random.Generator, signal: str = "reward") -> float:
    """One gradient step on the MSBE; returns the pre-step loss."""
    if len(buffer) == 0:
        raise ValueError("critic_update needs a nonempty buffer")
    loss, grads = msbe(q_net, q_target, policy, buffer.sample(rng, cfg.q_batch), signal,
                       cfg.gamma, rng)
    optimizer.step(grads)
    return loss


def epsilon_schedule(epoch: int, total: int, max_eps: float, warmup_frac: float) -> float:
    """Linear ramp from 0 to ``max_eps`` over the first ``warmup_frac`` of training."""
    if not 0 <= epoch <= total:
        raise ValueError("epoch must lie in [0, total]")
    ramp = warmup_frac * total
    if ramp <= 0:
        return float(max_eps)
    return float(max_eps) * min(1.0, epoch / ramp)


@dataclass
class Scheduler:
    total: int
    max_eps: float
    warmup_frac: float
    critics: dict
    targets: dict
    rho: float
    epoch: int = 0

    def current(self) -> float:
        return epsilon_schedule(self.epoch, self.total, self.max_eps, self.warmup_frac)

    def sync_targets(self) -> None:
        for name, target in self.targets.items():
            polyak_update(target.params(), self.critics[name].params(), self.rho)

    def advance(self) -> None:
        self.epoch = min(self.epoch + 1, self.total)


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


@dataclass
class Agent:
    policy: GaussianPolicyNet
    v_r: CriticNet
    v_c: CriticNet
    q_r: CriticNet
    q_c: CriticNet
    q_r_target: CriticNet
    q_c_target: CriticNet
    lagrange: LagrangeState
    optimizers: dict = field(default_factory=dict)

    def critics(self) -> dict:
        return {"q_r": self.q_r, "q_c": self.q_c, "v_c": self.v_c, "v_r": self.v_r}

    def nets(self) -> dict:
        return {"policy": self.policy, "v_r": self.v_r, "v_c": self.v_c, "q_r": self.q_r,
                "q_c": self.q_c, "q_r_target": self.q_r_target, "q_c_target": self.q_c_target}


def build_agent(cfg: TrainConfig, spec: envs.EnvSpec, rng: np.random.Generator) -> Agent:
    norm = envs.observation_normalizer(spec)
    d, a = spec.obs_dim, spec.act_dim
    policy = GaussianPolicyNet(d, a, cfg.hidden, rng, norm, cfg.init_log_std)
    v_r, v_c = CriticNet(d, 0, cfg.hidden, rng, norm), CriticNet(d, 0, cfg.hidden, rng, norm)
    q_r, q_c = CriticNet(d, a, cfg.hidden, rng, norm), CriticNet(d, a, cfg.hidden, rng, norm)
    lagrange = LagrangeState(kp=cfg.kp, ki=cfg.ki, kd=cfg.kd, lambda_max=cfg.lambda_max)
    agent = Agent(policy, v_r, v_c, q_r, q_c, q_r.copy(), q_c.copy(), lagrange)
    agent.optimizers = {
        "policy": Adam(policy.params(), cfg.actor_lr),
        "v_r": Adam(v_r.params(), cfg.critic_lr),
        "v_c": Adam(v_c.params(), cfg.critic_lr),
        "q_r": Adam(q_r.params(), cfg.critic_lr),
        "q_c": Adam(q_c.params(), cfg.critic_lr),
    }
    return agent


def collect_rollouts(spec: envs.EnvSpec, agent: Agent, n_episodes: int,
                     streams: dict, attacker=None) -> RolloutBatch:
    """Run ``n_episodes`` synchronised episodes; the policy acts on ``attacker(obs)`` if given."""
    state, obs = envs.reset(spec, streams["reset"], n_episodes)
    rows = {k: [] for k in ("obs", "true", "next_true", "act", "logp", "r", "c", "v_r", "v_c")}
    done = False
    while not done:
        seen = obs if attacker is None else attacker(obs, streams["attack"])
        act, logp = sample_action(agent.policy, seen, streams["action"])
        rows["obs"].append(seen)
        rows["true"].append(obs)
        rows["act"].append(act)
        rows["logp"].append(logp)
        rows["v_r"].append(agent.v_r.value(seen))
        rows["v_c"].append(agent.v_c.value(seen))
        state, r, c, done = envs.step(spec, state, act)
        obs = envs.observe(spec, state)
        rows["next_true"].append(obs)
        rows["r"].append(r)
        rows["c"].append(c)

    def flat(key):
        arr = np.asarray(rows[key])              # [T, n_episodes, ...]
        arr = np.swapaxes(arr, 0, 1)             # episode-major
        return arr.reshape((-1,) + arr.shape[2:])

    T = len(rows["r"])
    ends = np.zeros((n_episodes, T), dtype=bool)
    ends[:, -1] = True
    seen = flat("obs")
    next_seen = np.concatenate([seen.reshape(n_episodes, T, -1)[:, 1:],
                                flat("next_true").reshape(n_episodes, T, -1)[:, -1:]], axis=1)
    return RolloutBatch(obs=seen, actions=flat("act"), logp=flat("logp"), rewards=flat("r"),
                        costs=flat("c"), v_r=flat("v_r"), v_c=flat("v_c"),
                        episode_ends=ends.reshape(-1), true_obs=flat("true"),
                        next_true_obs=flat("next_true"), next_obs=next_seen.reshape(len(seen), -1))


@dataclass
class TrainResult:
    agent: Agent
    metrics: list[dict]
    config: TrainConfig
    spec: envs.EnvSpec


def _attack_config(cfg: TrainConfig, epsilon: float) -> AttackConfig:
    return AttackConfig(**{**cfg.attack, "epsilon": epsilon})


def run_training(cfg: TrainConfig, method: str = "ppol", out_dir: str | Path | None = None,
                 extra_loss_factory=None) -> TrainResult:
    """Shared epoch loop.

    ``extra_loss_factory(agent, batch, streams)`` (SA method) returns the
    ``extra_loss`` callable handed to :func:`update_policy` for the epoch.
    """
    if method not in ("ppol", "adv", "sa"):
        raise ValueError(f"unknown method {method!r}")
    if method == "adv" and cfg.attacker not in ADV_ATTACKERS:
        raise ValueError(f"adversarial training supports {ADV_ATTACKERS}, got {cfg.attacker!r}")
    spec = envs.make_spec(cfg.task, **cfg.env_overrides)
    streams = make_streams(cfg.seed)
    agent = build_agent(cfg, spec, streams["init"])
    n_episodes = max(1, cfg.batch_size // spec.episode_len)
    buffer = ReplayBuffer(cfg.buffer_capacity, spec.obs_dim, spec.act_dim)
    corrupting = method == "adv" and cfg.attacker != "none"
    sched = Scheduler(cfg.epochs, cfg.epsilon if corrupting else 0.0, cfg.warmup_frac,
                      {"q_r": agent.q_r, "q_c": agent.q_c},
                      {"q_r": agent.q_r_target, "q_c": agent.q_c_target}, cfg.polyak)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps({"method": method, **cfg.to_dict(),
                                                     "env": spec.to_dict()}, indent=2))
        (out / "metrics.jsonl").write_text("")
    metrics = []
    for epoch in range(cfg.epochs):
        eps = sched.current()
        attacker = None
        if method == "adv":
            attacker = Attacker(cfg.attacker, _attack_config(cfg, eps), agent.policy, agent.critics())
        batch = collect_rollouts(spec, agent, n_episodes, streams, attacker)
        ep_r, ep_c = batch.episode_returns()
        batch = prepare_batch(batch, cfg)

        agent.lagrange = pid_update(agent.lagrange, float(ep_c.mean()), cfg.cost_limit)
        extra = extra_loss_factory(agent, batch, streams) if extra_loss_factory else None
        info = update_policy(batch, agent.policy, agent.lagrange, cfg, agent.optimizers["policy"],
                             streams["minibatch"], extra)
        v_loss_r = update_value(agent.v_r, agent.optimizers["v_r"], batch.obs, batch.ret_r, cfg,
                                streams["minibatch"])
        v_loss_c = update_value(agent.v_c, agent.optimizers["v_c"], batch.obs, batch.ret_c, cfg,
                                streams["minibatch"])

        if cfg.critic_obs == "true":
            s, s_next = batch.true_obs, batch.next_true_obs
        else:
            s, s_next = batch.obs, batch.next_obs
        buffer.add(s, batch.actions, s_next, batch.rewards, batch.costs, batch.episode_ends)
        q_loss_r = q_loss_c = 0.0
        for _ in range(cfg.q_steps):
            q_loss_r = critic_update(buffer, agent.q_r, agent.q_r_target, agent.policy, cfg,
                                     agent.optimizers["q_r"], streams["critic"], "reward")
            q_loss_c = critic_update(buffer, agent.q_c, agent.q_c_target, agent.policy, cfg,
                                     agent.optimizers["q_c"], streams["critic"], "cost")
            sched.sync_targets()
        sched.advance()

        if not all(math.isfinite(x) for x in (v_loss_r, v_loss_c, q_loss_r, q_loss_c)):
            raise TrainingFault(f"critic loss diverged at epoch {epoch}")
        row = {"epoch": epoch, "reward_mean": float(ep_r.mean()), "cost_mean": float(ep_c.mean()),
               "lambda": agent.lagrange.lam, "kl": info.kl, "eps_current": eps,
               "actor_steps": info.steps, "aborted": info.aborted, "v_loss_r": v_loss_r,
               "v_loss_c": v_loss_c, "q_loss_r": q_loss_r, "q_loss_c": q_loss_c}
        metrics.append(row)
        if out is not None:
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(row) + "\n")
            last = epoch == cfg.epochs - 1
            if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                save_checkpoint(out / "checkpoint.json", agent.nets(),
                                {"epoch": epoch, "method": method, "config": cfg.to_dict(),
                                 "env": spec.to_dict(), "lagrange": asdict(agent.lagrange)})
    return TrainResult(agent, metrics, cfg, spec)


def train_ppol(cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Vanilla PPO-Lagrangian: no adversary in the loop."""
    return run_training(cfg, "ppol", out_dir)


def adversarial_train(cfg: TrainConfig, out_dir=None) -> TrainResult:
    """PPO-Lagrangian on rollouts corrupted by ``cfg.attacker`` under the epsilon curriculum."""
    return run_training(cfg, "adv", out_dir)
