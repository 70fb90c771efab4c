"""Random tabular instances for property checks and the ``verify`` command."""

from __future__ import annotations

import numpy as np

from .cmdp import TabularCMDP, TabularPolicy
from .constrained import enumerate_deterministic
from .operators import evaluate_policy


def random_cmdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
                max_ball: int = 3, c_max: float = 1.0, kappa: float = 1.0,
                balls=None) -> TabularCMDP:
    """Dirichlet transitions, uniform rewards, costs only on entering a random unsafe set."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0.0, 1.0, size=P.shape)
    n_unsafe = int(rng.integers(1, max(2, n_states)))
    unsafe = rng.choice(n_states, size=n_unsafe, replace=False)
    c = np.zeros(P.shape)
    c[:, :, unsafe] = rng.uniform(0.1, 1.0, size=(n_states, n_actions, n_unsafe)) * c_max
    mu0 = rng.dirichlet(np.ones(n_states))
    if balls is None:
        balls = []
        for s in range(n_states):
            size = int(rng.integers(1, min(max_ball, n_states) + 1))
            others = [t for t in range(n_states) if t != s]
            extra = rng.choice(others, size=size - 1, replace=False) if size > 1 else []
            balls.append([s, *map(int, extra)])
    return TabularCMDP(P, r, c, gamma, mu0, kappa, c_max, balls)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int,
                  temperature: float = 1.0) -> TabularPolicy:
    logits = rng.normal(scale=temperature, size=(n_states, n_actions))
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def embedded_instance(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
                      radius: float, c_max: float = 1.0, kappa: float = 1.0
                      ) -> tuple[TabularCMDP, np.ndarray, np.ndarray]:
    """States placed in the unit square; balls are l_inf neighbourhoods of ``radius``."""
    points = rng.uniform(size=(n_states, 2))
    metric = np.max(np.abs(points[:, None, :] - points[None, :, :]), axis=2)
    balls = [np.flatnonzero(metric[s] <= radius).tolist() for s in range(n_states)]
    cmdp = random_cmdp(rng, n_states, n_actions, gamma, c_max=c_max, kappa=kappa, balls=balls)
    return cmdp, metric, points


def smooth_policy(rng: np.random.Generator, metric_points: np.ndarray, n_actions: int,
                  sharpness: float = 2.0) -> TabularPolicy:
    """Softmax of a random linear function of state coordinates (Lipschitz by construction)."""
    W = rng.normal(scale=sharpness, size=(metric_points.shape[1], n_actions))
    logits = metric_points @ W
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def feasible_kappa(rng: np.random.Generator, cmdp: TabularCMDP, policy: TabularPolicy) -> float:
    """A threshold the given policy satisfies, with random slack."""
    _, V_c = evaluate_policy(cmdp, policy, method="direct")
    return float(cmdp.mu0 @ V_c) * (1.0 + rng.uniform(0.0, 0.5))


def tempting_instance(rng: np.random.Generator, n_states: int = 2, n_actions: int = 2,
                      gamma: float = 0.9, max_tries: int = 100) -> TabularCMDP:
    """Random CMDP with ``kappa`` strictly between the cheapest and the reward-greedy cost."""
    for _ in range(max_tries):
        cmdp = random_cmdp(rng, n_states, n_actions, gamma)
        table = enumerate_deterministic(cmdp)
        best = np.flatnonzero(table.v_r == table.v_r.max())
        greedy_cost = table.v_c[best].min()
        cheapest = table.v_c.min()
        if greedy_cost - cheapest > 1e-3 * max(1.0, greedy_cost):
            kappa = cheapest + rng.uniform(0.1, 0.9) * (greedy_cost - cheapest)
            return cmdp.replace(kappa=float(kappa))
    raise RuntimeError("could not draw a tempting instance")


def non_tempting_instance(rng: np.random.Generator, n_states: int = 2, n_actions: int = 2,
                          gamma: float = 0.9) -> TabularCMDP:
    """Random CMDP whose reward-greedy policy already satisfies ``kappa``."""
    cmdp = random_cmdp(rng, n_states, n_actions, gamma)
    table = enumerate_deterministic(cmdp)
    best = np.flatnonzero(table.v_r == table.v_r.max())
    kappa = table.v_c[best].min() * (1.0 + rng.uniform(0.0, 0.5))
    return cmdp.replace(kappa=float(kappa))
