"""Executable checks: operator contraction and perturbation cost bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import CMDPError, TabularAdversary, TabularCMDP, TabularPolicy
from .operators import (
    bellman_adversary_op,
    bellman_policy_op,
    brute_force_adversary,
    evaluate_policy,
)

BOUND_SLACK = 1e-9


class LipschitzError(CMDPError):
    """Two states at distance zero have different action distributions."""


def check_contraction(cmdp: TabularCMDP, policy: TabularPolicy, op_kind: str,
                      n_trials: int, rng_seed: int,
                      adversary: TabularAdversary | None = None,
                      objective: str = "cost") -> float:
    """Largest observed ``||T U - T V||_inf / ||U - V||_inf`` over random pairs.

    ``op_kind`` is ``"policy"`` (with ``adversary``, random if omitted and
    ``objective`` selecting the signal), ``"cost"`` or ``"reward"`` for the
    optimal-adversary operators.
    """
    if n_trials < 1:
        raise CMDPError("n_trials must be at least 1")
    rng = np.random.default_rng(rng_seed)
    if op_kind == "policy":
        if adversary is None:
            mapping = [rng.choice(ball) for ball in cmdp.balls]
            adversary = TabularAdversary(np.asarray(mapping), cmdp.balls)

        def op(V):
            return bellman_policy_op(V, cmdp, policy, adversary, objective)
    elif op_kind in ("cost", "reward"):
        def op(V):
            return bellman_adversary_op(V, cmdp, policy, op_kind)
    else:
        raise CMDPError(f"unknown operator kind {op_kind!r}")

    scale = max(1.0, cmdp.c_max, float(np.max(np.abs(cmdp.reward)))) / (1.0 - cmdp.gamma)
    worst = 0.0
    for _ in range(n_trials):
        U = rng.normal(scale=scale, size=cmdp.n_states)
        V = rng.normal(scale=scale, size=cmdp.n_states)
        denom = np.max(np.abs(U - V))
        if denom == 0.0:
            continue
        worst = max(worst, float(np.max(np.abs(op(U) - op(V))) / denom))
    return worst


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(p - q)))


def local_lipschitz(cmdp: TabularCMDP, policy: TabularPolicy, state: int,
                    metric: np.ndarray) -> tuple[float, float]:
    """Measured ``(L, eps)`` at ``state``: max TV/distance ratio and ball radius."""
    lip, eps = 0.0, 0.0
    here = policy.probs[state]
    for other in cmdp.balls[state]:
        if other == state:
            continue
        dist = float(metric[state, other])
        tv = total_variation(policy.probs[other], here)
        if dist <= 0.0:
            if tv > 0.0:
                raise LipschitzError(
                    f"states {state} and {other} are at distance 0 with different policies")
            continue
        lip = max(lip, tv / dist)
        eps = max(eps, dist)
    return lip, eps


def max_unsafe_probability(cmdp: TabularCMDP) -> np.ndarray:
    """``p_s = max_a sum_{s' in S_c} P[s, a, s']`` for every state."""
    unsafe = cmdp.unsafe_states()
    return np.max(cmdp.transition[:, :, unsafe].sum(axis=2), axis=1)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    lipschitz: float
    epsilon: float


def _check_metric(cmdp, metric):
    metric = np.asarray(metric, dtype=float)
    if metric.shape != (cmdp.n_states, cmdp.n_states):
        raise CMDPError("metric must be an [S, S] distance matrix")
    return metric


def verify_one_step_bound(cmdp: TabularCMDP, policy: TabularPolicy, state: int,
                          metric: np.ndarray) -> BoundCheck:
    """Worst single-state perturbation cost increase against ``2 L eps (p_s C_m + g C_m/(1-g))``.

    Only ``state`` is corrupted and the next state is still drawn from the
    true state, with continuation valued under the unattacked policy.
    """
    metric = _check_metric(cmdp, metric)
    lip, eps = local_lipschitz(cmdp, policy, state, metric)
    _, V_c = evaluate_policy(cmdp, policy, method="direct")
    q_c = cmdp.expected_signal("cost")[state] + cmdp.gamma * (cmdp.transition[state] @ V_c)
    lhs = max(float(policy.probs[t] @ q_c) for t in cmdp.balls[state]) - float(V_c[state])
    g, cm = cmdp.gamma, cmdp.c_max
    p_s = float(max_unsafe_probability(cmdp)[state])
    rhs = 2.0 * lip * eps * (p_s * cm + g * cm / (1.0 - g))
    return BoundCheck(lhs, rhs, lhs <= rhs + BOUND_SLACK, lip, eps)


def verify_episodic_bound(cmdp: TabularCMDP, policy: TabularPolicy,
                          metric: np.ndarray) -> BoundCheck:
    """Worst whole-episode cost under any deterministic adversary versus the episodic bound."""
    metric = _check_metric(cmdp, metric)
    _, V_c = evaluate_policy(cmdp, policy, method="direct")
    natural = float(cmdp.mu0 @ V_c)
    if natural > cmdp.kappa + BOUND_SLACK:
        raise CMDPError(f"policy is infeasible: V_c={natural:.6g} > kappa={cmdp.kappa}")
    lip, eps = 0.0, 0.0
    for s in range(cmdp.n_states):
        l_s, e_s = local_lipschitz(cmdp, policy, s, metric)
        lip, eps = max(lip, l_s), max(eps, e_s)
    _, lhs = brute_force_adversary(cmdp, policy, "cost")
    g, cm = cmdp.gamma, cmdp.c_max
    p_max = float(np.max(max_unsafe_probability(cmdp)))
    rhs = cmdp.kappa + 2.0 * lip * eps * cm * (
        1.0 / (1.0 - g) + 4.0 * g * lip * eps / (1.0 - g) ** 2) * (p_max + g / (1.0 - g))
    return BoundCheck(lhs, rhs, lhs <= rhs + BOUND_SLACK, lip, eps)
