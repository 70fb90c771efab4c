"""Kinematic point-mass tasks: Run (go forward inside a corridor under a speed limit)
and Circle (orbit the origin while staying inside two vertical walls).

All functions are vectorised: an ``EnvState`` holds ``n`` synchronised copies.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .nn import Normalizer

TASKS = ("run", "circle")


class EnvFault(RuntimeError):
    """The simulator produced or received a non-finite quantity."""


@dataclass(frozen=True)
class EnvSpec:
    task: str = "run"
    dt: float = 0.05
    max_force: float = 1.0
    episode_len: int = 200
    jitter: float = 0.05
    # run
    y_lim: float = 0.5
    v_lim: float = 1.0
    goal: tuple[float, float] = (100.0, 0.0)
    # circle
    radius_r: float = 1.0
    x_lim: float | None = None
    start: tuple[float, float] | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.dt <= 0 or self.max_force <= 0 or self.episode_len < 1:
            raise ValueError("dt, max_force and episode_len must be positive")
        if min(self.y_lim, self.v_lim, self.radius_r) <= 0 or self.jitter < 0:
            raise ValueError("y_lim, v_lim and radius_r must be positive, jitter nonnegative")
        if self.x_lim is None:
            object.__setattr__(self, "x_lim", 0.8 * self.radius_r)
        if self.x_lim <= 0:
            raise ValueError("x_lim must be positive")
        object.__setattr__(self, "goal", tuple(float(g) for g in self.goal))
        if self.start is None:
            nominal = (0.0, 0.0) if self.task == "run" else (0.0, self.radius_r)
            object.__setattr__(self, "start", nominal)
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))

    @property
    def obs_dim(self) -> int:
        return 7 if self.task == "run" else 6

    @property
    def act_dim(self) -> int:
        return 2

    @property
    def c_max(self) -> float:
        """Largest per-step cost."""
        return 2.0 if self.task == "run" else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goal"], d["start"] = list(self.goal), list(self.start)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        return cls(**doc)

    def replace(self, **changes) -> "EnvSpec":
        return replace(self, **changes)


def make_spec(task: str, **overrides) -> EnvSpec:
    """Task defaults: Run episodes last 200 steps, Circle episodes 300."""
    base = {"run": {"episode_len": 200}, "circle": {"episode_len": 300}}[task]
    return EnvSpec(task=task, **{**base, **overrides})


@dataclass
class EnvState:
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    t: int = 0

    @property
    def n(self) -> int:
        return int(np.size(self.x))

    def copy(self) -> "EnvState":
        return EnvState(self.x.copy(), self.y.copy(), self.vx.copy(), self.vy.copy(), self.t)

    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    def as_array(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.vx, self.vy], axis=-1)


def reset(spec: EnvSpec, seed, n: int = 1) -> tuple[EnvState, np.ndarray]:
    """``n`` starts jittered uniformly around the nominal point, velocities within ``jitter / 10``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    j = spec.jitter
    pos = rng.uniform(-j, j, size=(2, n))
    vel = rng.uniform(-0.1 * j, 0.1 * j, size=(2, n))
    state = EnvState(spec.start[0] + pos[0], spec.start[1] + pos[1], vel[0], vel[1], 0)
    return state, observe(spec, state)


def _goal_distance(spec: EnvSpec, x, y):
    return np.hypot(spec.goal[0] - x, spec.goal[1] - y)


def step(spec: EnvSpec, state: EnvState, action) -> tuple[EnvState, np.ndarray, np.ndarray, bool]:
    """Double-integrator update followed by the task's reward and cost."""
    a = np.asarray(action, dtype=float).reshape(state.n, 2)
    if not np.all(np.isfinite(a)):
        raise EnvFault(f"non-finite action at t={state.t}")
    a = np.clip(a, -spec.max_force, spec.max_force)
    vx = state.vx + a[:, 0] * spec.dt
    vy = state.vy + a[:, 1] * spec.dt
    x = state.x + vx * spec.dt
    y = state.y + vy * spec.dt
    nxt = EnvState(x, y, vx, vy, state.t + 1)
    if not np.all(np.isfinite(nxt.as_array())):
        raise EnvFault(f"non-finite state at t={nxt.t}")
    if spec.task == "run":
        reward = _goal_distance(spec, state.x, state.y) - _goal_distance(spec, x, y)
        cost = run_cost(spec, nxt)
    else:
        reward, cost = circle_reward(spec, nxt), circle_cost(spec, nxt)
    return nxt, reward, cost, nxt.t >= spec.episode_len


def run_cost(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """Corridor indicator plus speed-limit indicator."""
    return (np.abs(state.y) > spec.y_lim).astype(float) + (state.speed() > spec.v_lim).astype(float)


def circle_reward(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """Angular progress, discounted by distance from the target circle."""
    rho = np.hypot(state.x, state.y)
    return (-state.y * state.vx + state.x * state.vy) / (1.0 + np.abs(rho - spec.radius_r))


def circle_cost(spec: EnvSpec, state: EnvState) -> np.ndarray:
    return (np.abs(state.x) > spec.x_lim).astype(float)


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """``[x, y, vx, vy, task features]`` with one row per copy."""
    base = [state.x, state.y, state.vx, state.vy]
    if spec.task == "run":
        feats = [spec.goal[0] - state.x, spec.goal[1] - state.y, spec.v_lim - state.speed()]
    else:
        feats = [np.hypot(state.x, state.y) - spec.radius_r, spec.x_lim - np.abs(state.x)]
    return np.stack([np.asarray(f, dtype=float) for f in base + feats], axis=-1)


def observation_normalizer(spec: EnvSpec) -> Normalizer:
    """Fixed scaling that puts every feature on a unit-ish range over a typical episode."""
    if spec.task == "run":
        horizon = spec.episode_len * spec.dt * spec.v_lim
        shift = [horizon / 2, 0.0, 0.0, 0.0, spec.goal[0] - horizon / 2, spec.goal[1], 0.0]
        scale = [horizon / 2, spec.y_lim, spec.v_lim, spec.v_lim, horizon / 2, spec.y_lim, spec.v_lim]
    else:
        r = spec.radius_r
        shift = [0.0] * 6
        scale = [r, r, 1.0, 1.0, 0.5 * r, 0.5 * r]
    return Normalizer(np.asarray(shift, dtype=float), np.asarray(scale, dtype=float))


def dump_trajectory(path: str | Path, states, observations, actions, rewards, costs) -> None:
    """One JSON object per step with the true state, the observation the agent saw,
    the action, reward and cost."""
    with open(path, "w") as fh:
        for s, o, a, r, c in zip(states, observations, actions, rewards, costs):
            fh.write(json.dumps({"state": np.asarray(s).tolist(), "obs": np.asarray(o).tolist(),
                                 "action": np.asarray(a).tolist(), "r": float(r), "c": float(c)}))
            fh.write("\n")
