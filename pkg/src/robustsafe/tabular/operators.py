"""Bellman operators under observational adversaries and their fixed points."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cmdp import CMDPError, TabularAdversary, TabularCMDP, TabularPolicy

DEFAULT_TOL = 1e-10
BRUTE_FORCE_BUDGET = 10**5
MAX_ITERS = 10**7


class BudgetError(RuntimeError):
    """Enumeration would exceed the configured candidate budget."""


def _check_vector(V, cmdp: TabularCMDP) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape != (cmdp.n_states,):
        raise CMDPError(f"value vector must have shape ({cmdp.n_states},), got {V.shape}")
    return V


def _check_policy(policy: TabularPolicy, cmdp: TabularCMDP) -> None:
    if policy.probs.shape != (cmdp.n_states, cmdp.n_actions):
        raise CMDPError("policy shape does not match the CMDP")


def _q_table(V: np.ndarray, cmdp: TabularCMDP, objective: str) -> np.ndarray:
    # Q[s, a] = sum_s' P[s,a,s'] (f[s,a,s'] + gamma V[s'])
    return cmdp.expected_signal(objective) + cmdp.gamma * (cmdp.transition @ V)


def bellman_policy_op(V, cmdp: TabularCMDP, policy: TabularPolicy,
                      adversary: TabularAdversary | None = None,
                      objective: str = "cost") -> np.ndarray:
    """One application of the policy operator for ``pi o nu``."""
    V = _check_vector(V, cmdp)
    _check_policy(policy, cmdp)
    mapping = np.arange(cmdp.n_states) if adversary is None else adversary.mapping
    if len(mapping) != cmdp.n_states:
        raise CMDPError("adversary does not match the CMDP")
    return np.sum(policy.probs[mapping] * _q_table(V, cmdp, objective), axis=1)


def _policy_matrices(cmdp, policy, mapping, objective):
    pi = policy.probs[mapping]
    P_pi = np.einsum("sa,sat->st", pi, cmdp.transition)
    f_pi = np.sum(pi * cmdp.expected_signal(objective), axis=1)
    return P_pi, f_pi


def _iterate(step, V0, gamma, tol):
    """Fixed-point iteration stopped once the contraction certificate is below tol."""
    V = V0
    # ||V_k - V*|| <= gamma / (1 - gamma) * ||V_k - V_{k-1}||
    factor = gamma / (1.0 - gamma) if gamma > 0 else 0.0
    for _ in range(MAX_ITERS):
        V_next = step(V)
        residual = np.max(np.abs(V_next - V)) if V.size else 0.0
        V = V_next
        if residual * factor < tol or residual == 0.0:
            return V
    raise RuntimeError("value iteration did not converge")  # pragma: no cover


def evaluate_policy(cmdp: TabularCMDP, policy: TabularPolicy,
                    adversary: TabularAdversary | None = None,
                    tol: float = DEFAULT_TOL, method: str = "iterate") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(V_r, V_c)`` of ``pi o nu``.

    ``method="iterate"`` applies the policy operator until the sup-norm error
    certificate drops below ``tol``; ``method="direct"`` solves the linear system.
    """
    if tol <= 0:
        raise CMDPError("tol must be positive")
    _check_policy(policy, cmdp)
    mapping = np.arange(cmdp.n_states) if adversary is None else adversary.mapping
    out = []
    for objective in ("reward", "cost"):
        P_pi, f_pi = _policy_matrices(cmdp, policy, mapping, objective)
        if method == "direct":
            out.append(np.linalg.solve(np.eye(cmdp.n_states) - cmdp.gamma * P_pi, f_pi))
        elif method == "iterate":
            out.append(_iterate(lambda V: f_pi + cmdp.gamma * (P_pi @ V),
                                np.zeros(cmdp.n_states), cmdp.gamma, tol))
        else:
            raise CMDPError(f"unknown evaluation method {method!r}")
    return out[0], out[1]


def _ball_mask(cmdp: TabularCMDP) -> np.ndarray:
    mask = np.zeros((cmdp.n_states, cmdp.n_states), dtype=bool)
    for s, ball in enumerate(cmdp.balls):
        mask[s, list(ball)] = True
    return mask


def _adversary_scores(V, cmdp, policy, objective):
    # scores[s, t] = sum_a pi(a | t) Q[s, a]; entries outside B(s) are -inf
    scores = _q_table(V, cmdp, objective) @ policy.probs.T
    return np.where(_ball_mask(cmdp), scores, -np.inf)


def bellman_adversary_op(V, cmdp: TabularCMDP, policy: TabularPolicy,
                         objective: str = "cost") -> np.ndarray:
    """Optimal-adversary operator: per-state max over the perturbation set."""
    V = _check_vector(V, cmdp)
    _check_policy(policy, cmdp)
    return np.max(_adversary_scores(V, cmdp, policy, objective), axis=1)


def optimal_adversary(cmdp: TabularCMDP, policy: TabularPolicy, objective: str = "cost",
                      tol: float = DEFAULT_TOL) -> tuple[TabularAdversary, np.ndarray]:
    """Deterministic MC (``objective="cost"``) or MR (``"reward"``) adversary.

    Returns the adversary and its exact value vector for ``objective``.
    """
    if tol <= 0:
        raise CMDPError("tol must be positive")
    _check_policy(policy, cmdp)
    V = _iterate(lambda U: bellman_adversary_op(U, cmdp, policy, objective),
                 np.zeros(cmdp.n_states), cmdp.gamma, tol)
    # np.argmax returns the first maximiser, i.e. the lowest state index.
    mapping = np.argmax(_adversary_scores(V, cmdp, policy, objective), axis=1)
    adversary = TabularAdversary(mapping, cmdp.balls)
    V_r, V_c = evaluate_policy(cmdp, policy, adversary, tol=tol)
    return adversary, (V_c if objective == "cost" else V_r)


def n_adversaries(cmdp: TabularCMDP) -> int:
    return math.prod(len(b) for b in cmdp.balls)


def iter_adversaries(cmdp: TabularCMDP):
    for mapping in itertools.product(*cmdp.balls):
        yield TabularAdversary(np.asarray(mapping), cmdp.balls)


def brute_force_adversary(cmdp: TabularCMDP, policy: TabularPolicy, objective: str = "cost",
                          budget: int = BRUTE_FORCE_BUDGET) -> tuple[TabularAdversary, float]:
    """Exhaustive search over every deterministic adversary map.

    Each candidate is scored by ``mu0 @ V_f`` with a direct linear solve;
    the first maximiser in lexicographic order wins.
    """
    count = n_adversaries(cmdp)
    if count > budget:
        raise BudgetError(f"{count} candidate adversaries exceed the budget of {budget}")
    cmdp.signal(objective)
    best, best_value = None, -np.inf
    for adversary in iter_adversaries(cmdp):
        V_r, V_c = evaluate_policy(cmdp, policy, adversary, method="direct")
        value = float(cmdp.mu0 @ (V_c if objective == "cost" else V_r))
        if value > best_value:
            best, best_value = adversary, value
    return best, best_value


@dataclass(frozen=True, eq=False)
class AdversaryMDP:
    """Lifted MDP whose actions are reported states.

    ``transition[s, t, s']`` and ``reward[s, t, s']`` with ``t`` ranging over
    all states; choosing ``t`` outside ``B(s)`` pays ``-penalty_C``.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    penalty_C: float
    objective: str


def _signal_scale(cmdp: TabularCMDP, objective: str) -> float:
    if objective == "cost":
        return cmdp.c_max / (1.0 - cmdp.gamma)
    r = float(np.max(np.abs(cmdp.reward)))
    # in-ball returns lie in [-r/(1-g), r/(1-g)]; one out-of-ball step must lose
    return (1.0 + cmdp.gamma) * r / (1.0 - cmdp.gamma)


def default_penalty(cmdp: TabularCMDP, objective: str = "cost") -> float:
    return 2.0 * max(_signal_scale(cmdp, objective), cmdp.c_max / (1.0 - cmdp.gamma))


def build_adversary_mdp(cmdp: TabularCMDP, policy: TabularPolicy, objective: str = "cost",
                        penalty_C: float | None = None) -> AdversaryMDP:
    _check_policy(policy, cmdp)
    f = cmdp.signal(objective)
    if penalty_C is None:
        penalty_C = default_penalty(cmdp, objective)
    if penalty_C <= _signal_scale(cmdp, objective):
        raise CMDPError(
            f"penalty_C={penalty_C} too small to keep the optimum inside the perturbation sets")
    pi = policy.probs
    # p_hat[s, t, s'] = sum_a pi(a|t) P[s, a, s']
    p_hat = np.einsum("ta,sak->stk", pi, cmdp.transition)
    weighted = np.einsum("ta,sak->stk", pi, cmdp.transition * f)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_hat = np.where(p_hat > 0, weighted / np.where(p_hat > 0, p_hat, 1.0), 0.0)
    outside = ~_ball_mask(cmdp)
    r_hat[outside] = -penalty_C
    return AdversaryMDP(p_hat, r_hat, cmdp.gamma, float(penalty_C), objective)


def solve_adversary_mdp(amdp: AdversaryMDP, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Standard value iteration on the lifted MDP; returns ``(V, greedy actions)``."""
    expected = np.einsum("stk,stk->st", amdp.transition, amdp.reward)

    def q(V):
        return expected + amdp.gamma * (amdp.transition @ V)

    V = _iterate(lambda U: np.max(q(U), axis=1), np.zeros(amdp.transition.shape[0]),
                 amdp.gamma, tol)
    return V, np.argmax(q(V), axis=1)
