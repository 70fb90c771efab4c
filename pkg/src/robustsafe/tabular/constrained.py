"""Constrained optimum and temptation status by policy enumeration.

Every point of the achievable ``(V_r, V_c)`` set is a trajectory-wise mixture of
deterministic policies, so the constrained optimum sits on the upper concave
hull of the deterministic values. Two hull vertices bracketing ``kappa`` are
mixed to land exactly on the constraint boundary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cmdp import MixedPolicy, TabularCMDP, TabularPolicy
from .operators import BRUTE_FORCE_BUDGET, BudgetError, evaluate_policy


class InfeasibleError(RuntimeError):
    """No policy satisfies the cost threshold."""


@dataclass(frozen=True, eq=False)
class PolicyTable:
    actions: np.ndarray   # [n_policies, S] deterministic action per state
    v_r: np.ndarray       # mu0-weighted reward value per policy
    v_c: np.ndarray       # mu0-weighted cost value per policy

    def policy(self, i: int, n_actions: int) -> TabularPolicy:
        return TabularPolicy.deterministic(self.actions[i], n_actions)


def enumerate_deterministic(cmdp: TabularCMDP, budget: int = BRUTE_FORCE_BUDGET) -> PolicyTable:
    count = cmdp.n_actions ** cmdp.n_states
    if count > budget:
        raise BudgetError(f"{count} deterministic policies exceed the budget of {budget}")
    actions = np.array(list(itertools.product(range(cmdp.n_actions), repeat=cmdp.n_states)),
                       dtype=int).reshape(count, cmdp.n_states)
    v_r = np.empty(count)
    v_c = np.empty(count)
    for i, acts in enumerate(actions):
        V_r, V_c = evaluate_policy(cmdp, TabularPolicy.deterministic(acts, cmdp.n_actions),
                                   method="direct")
        v_r[i] = cmdp.mu0 @ V_r
        v_c[i] = cmdp.mu0 @ V_c
    return PolicyTable(actions, v_r, v_c)


def _upper_frontier(v_c: np.ndarray, v_r: np.ndarray) -> list[int]:
    """Indices of the upper concave hull of the Pareto frontier, by increasing cost."""
    order = np.lexsort((-v_r, v_c))
    pareto = []
    for i in order:
        if not pareto or v_r[i] > v_r[pareto[-1]]:
            pareto.append(int(i))
    hull: list[int] = []
    for i in pareto:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (v_c[b] - v_c[a]) * (v_r[i] - v_r[a]) - (v_r[b] - v_r[a]) * (v_c[i] - v_c[a])
            if cross >= 0:  # b lies on or below the chord a-i
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def solve_constrained_optimum(cmdp: TabularCMDP, table: PolicyTable | None = None
                              ) -> tuple[MixedPolicy, float, float]:
    """Reward-optimal feasible mixture ``(policy, V_r*, V_c*)`` at ``mu0``."""
    if table is None:
        table = enumerate_deterministic(cmdp)
    hull = _upper_frontier(table.v_c, table.v_r)
    kappa = cmdp.kappa
    if table.v_c[hull[0]] > kappa:
        raise InfeasibleError(f"minimum achievable cost {table.v_c[hull[0]]:.6g} exceeds kappa={kappa}")
    peak = hull[-1]
    if table.v_c[peak] <= kappa:
        comp = (table.policy(peak, cmdp.n_actions),)
        mix = MixedPolicy(comp, np.array([1.0]), np.array([[table.v_r[peak], table.v_c[peak]]]))
        return mix, float(table.v_r[peak]), float(table.v_c[peak])
    for lo, hi in zip(hull, hull[1:]):
        if table.v_c[lo] <= kappa < table.v_c[hi]:
            break
    alpha = (kappa - table.v_c[lo]) / (table.v_c[hi] - table.v_c[lo])
    v_r = (1.0 - alpha) * table.v_r[lo] + alpha * table.v_r[hi]
    v_c = (1.0 - alpha) * table.v_c[lo] + alpha * table.v_c[hi]
    mix = MixedPolicy(
        (table.policy(lo, cmdp.n_actions), table.policy(hi, cmdp.n_actions)),
        np.array([1.0 - alpha, alpha]),
        np.array([[table.v_r[lo], table.v_c[lo]], [table.v_r[hi], table.v_c[hi]]]),
    )
    return mix, float(v_r), float(v_c)


@dataclass(frozen=True, eq=False)
class Temptation:
    tempting: bool
    witness: TabularPolicy | None
    witness_values: tuple[float, float] | None   # (V_r, V_c) of the witness
    optimum_reward: float
    optimum_cost: float

    @property
    def status(self) -> str:
        return "tempting" if self.tempting else "non_tempting"


def classify_temptation(cmdp: TabularCMDP, table: PolicyTable | None = None) -> Temptation:
    """Tempting iff the unconstrained reward optimum beats the constrained one.

    The unconstrained optimum is attained by a deterministic policy, which is
    returned as the witness. Raises if the witness were feasible, since a
    feasible policy can never out-earn the constrained optimum.
    """
    if table is None:
        table = enumerate_deterministic(cmdp)
    _, v_r_star, v_c_star = solve_constrained_optimum(cmdp, table)
    best = np.flatnonzero(table.v_r == table.v_r.max())
    best = best[np.argmin(table.v_c[best])]
    scale = max(1.0, abs(v_r_star))
    if table.v_r[best] <= v_r_star + 1e-12 * scale:
        return Temptation(False, None, None, v_r_star, v_c_star)
    witness_values = (float(table.v_r[best]), float(table.v_c[best]))
    if not witness_values[1] > cmdp.kappa:
        raise RuntimeError("tempting witness is feasible; enumeration is inconsistent")
    return Temptation(True, table.policy(best, cmdp.n_actions), witness_values, v_r_star, v_c_star)
