"""Finite constrained MDPs, tabular policies and state-space adversaries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class CMDPError(ValueError):
    """Raised on malformed tabular inputs."""


def _as_balls(balls, n_states: int) -> tuple[tuple[int, ...], ...]:
    if balls is None:
        return tuple((s,) for s in range(n_states))
    if len(balls) != n_states:
        raise CMDPError(f"expected {n_states} balls, got {len(balls)}")
    out = []
    for s, ball in enumerate(balls):
        members = tuple(sorted({int(x) for x in ball}))
        if not members:
            raise CMDPError(f"empty perturbation set at state {s}")
        if s not in members:
            raise CMDPError(f"perturbation set of state {s} must contain {s}")
        if members[0] < 0 or members[-1] >= n_states:
            raise CMDPError(f"perturbation set of state {s} has out-of-range members")
        out.append(members)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class TabularCMDP:
    """Finite CMDP ``(S, A, P, r, c, gamma, mu0, kappa, C_m)``.

    ``transition``, ``reward`` and ``cost`` are indexed ``[s, a, s']``.
    ``balls[s]`` is the explicit set of states the adversary may report
    instead of ``s``; it always contains ``s``.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    gamma: float
    mu0: np.ndarray
    kappa: float
    c_max: float
    balls: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        c = np.asarray(self.cost, dtype=float)
        mu0 = np.asarray(self.mu0, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise CMDPError(f"transition must be [S, A, S], got shape {P.shape}")
        if r.shape != P.shape or c.shape != P.shape:
            raise CMDPError("reward and cost must match the transition shape")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise CMDPError("transition rows must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise CMDPError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.c_max <= 0:
            raise CMDPError("c_max must be positive")
        if np.any(c < 0) or np.any(c > self.c_max):
            raise CMDPError("cost entries must lie in [0, c_max]")
        if mu0.shape != (P.shape[0],) or np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > ROW_TOL:
            raise CMDPError("mu0 must be a distribution over states")
        if self.kappa < 0:
            raise CMDPError("kappa must be non-negative")
        for name, arr in (("transition", P), ("reward", r), ("cost", c), ("mu0", mu0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "balls", _as_balls(self.balls, P.shape[0]))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def signal(self, objective: str) -> np.ndarray:
        if objective == "cost":
            return self.cost
        if objective == "reward":
            return self.reward
        raise CMDPError(f"objective must be 'cost' or 'reward', got {objective!r}")

    def expected_signal(self, objective: str) -> np.ndarray:
        """``sum_s' P[s,a,s'] f[s,a,s']`` as an ``[S, A]`` table."""
        return np.einsum("ijk,ijk->ij", self.transition, self.signal(objective))

    def unsafe_states(self) -> np.ndarray:
        """Indices ``s'`` reachable with non-zero cost from some ``(s, a)``."""
        return np.flatnonzero(np.any(self.cost > 0, axis=(0, 1)))

    def replace(self, **changes) -> "TabularCMDP":
        fields = dict(
            transition=self.transition, reward=self.reward, cost=self.cost,
            gamma=self.gamma, mu0=self.mu0, kappa=self.kappa, c_max=self.c_max,
            balls=self.balls,
        )
        fields.update(changes)
        return TabularCMDP(**fields)

    def to_dict(self) -> dict:
        S, A, _ = self.transition.shape
        return {
            "format": "tabular-cmdp/1",
            "n_states": S,
            "n_actions": A,
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "cost": self.cost.ravel().tolist(),
            "gamma": self.gamma,
            "mu0": self.mu0.tolist(),
            "kappa": self.kappa,
            "c_max": self.c_max,
            "balls": [list(b) for b in self.balls],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularCMDP":
        S, A = int(doc["n_states"]), int(doc["n_actions"])
        shape = (S, A, S)

        def tensor(key):
            arr = np.asarray(doc[key], dtype=float)
            if arr.size != S * A * S:
                raise CMDPError(f"{key} has {arr.size} entries, expected {S * A * S}")
            return arr.reshape(shape)

        return cls(
            transition=tensor("transition"),
            reward=tensor("reward"),
            cost=tensor("cost"),
            gamma=float(doc["gamma"]),
            mu0=np.asarray(doc["mu0"], dtype=float),
            kappa=float(doc["kappa"]),
            c_max=float(doc["c_max"]),
            balls=doc.get("balls"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "TabularCMDP":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise CMDPError("policy rows must be probability vectors")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), np.asarray(actions)] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class MixedPolicy:
    """Trajectory-wise mixture: one component is drawn at ``t = 0`` and kept."""

    components: tuple[TabularPolicy, ...]
    weights: np.ndarray
    values: np.ndarray = field(default=None)  # per-component (V_r, V_c) at mu0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
            raise CMDPError("mixture weights must be a convex combination")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))


@dataclass(frozen=True, eq=False)
class TabularAdversary:
    """Deterministic observation map ``nu``; ``mapping[s]`` lies in ``balls[s]``."""

    mapping: np.ndarray
    balls: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=int)
        if m.shape != (len(self.balls),):
            raise CMDPError("adversary mapping must have one entry per state")
        for s, target in enumerate(m):
            if int(target) not in self.balls[s]:
                raise CMDPError(f"nu({s}) = {target} lies outside its perturbation set")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, cmdp: TabularCMDP) -> "TabularAdversary":
        return cls(np.arange(cmdp.n_states), cmdp.balls)


@dataclass(frozen=True)
class AttackMetrics:
    j_e: float
    j_s: float
    effective: bool
    stealthy: bool


def attack_metrics(v_natural: tuple[float, float], v_attacked: tuple[float, float]) -> AttackMetrics:
    """Effectiveness ``J_E`` (cost increase) and stealthiness ``J_S`` (reward change).

    Both arguments are ``(V_r, V_c)`` pairs.
    """
    j_e = float(v_attacked[1] - v_natural[1])
    j_s = float(v_attacked[0] - v_natural[0])
    return AttackMetrics(j_e=j_e, j_s=j_s, effective=j_e > 0, stealthy=j_s >= 0)
