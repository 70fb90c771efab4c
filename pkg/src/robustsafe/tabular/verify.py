"""Randomised instance suites behind the ``verify`` command.

Each suite yields :class:`CheckRecord` rows ``(check, instance_id, lhs, rhs, holds)``
where ``holds`` means ``lhs <= rhs`` unless a check documents otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bounds import (
    BOUND_SLACK,
    check_contraction,
    verify_episodic_bound,
    verify_one_step_bound,
)
from .cmdp import TabularPolicy
from .constrained import classify_temptation, enumerate_deterministic, solve_constrained_optimum
from .generators import (
    embedded_instance,
    feasible_kappa,
    non_tempting_instance,
    random_cmdp,
    random_policy,
    smooth_policy,
    tempting_instance,
)
from .operators import (
    brute_force_adversary,
    build_adversary_mdp,
    evaluate_policy,
    optimal_adversary,
    solve_adversary_mdp,
)

GAMMAS = (0.5, 0.9, 0.99)
VALUE_TOL = 1e-6


@dataclass(frozen=True)
class CheckRecord:
    check: str
    instance_id: int
    lhs: float
    rhs: float
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _rec(check, i, lhs, rhs, holds=None) -> CheckRecord:
    lhs, rhs = float(lhs), float(rhs)
    return CheckRecord(check, int(i), lhs, rhs, bool(lhs <= rhs if holds is None else holds))


def contraction_suite(n_instances: int = 100, n_pairs: int = 20, seed: int = 0):
    """Sup-norm Lipschitz ratio of the three operators against ``gamma``."""
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        gamma = GAMMAS[i % len(GAMMAS)]
        cmdp = random_cmdp(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)), gamma)
        pol = random_policy(rng, cmdp.n_states, cmdp.n_actions)
        for kind in ("policy", "cost", "reward"):
            ratio = check_contraction(cmdp, pol, kind, n_pairs, int(rng.integers(2**31)))
            yield _rec(f"contraction_{kind}", i, ratio, gamma + 1e-9)


def fixed_point_suite(n_instances: int = 50, seed: int = 1):
    """Fixed-point adversary value versus exhaustive search and the lifted MDP."""
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        cmdp = random_cmdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), 0.9, max_ball=3)
        pol = random_policy(rng, cmdp.n_states, cmdp.n_actions)
        for objective in ("cost", "reward"):
            _, V = optimal_adversary(cmdp, pol, objective)
            fixed = float(cmdp.mu0 @ V)
            _, brute = brute_force_adversary(cmdp, pol, objective)
            yield _rec(f"fixed_point_vs_brute_{objective}", i, abs(fixed - brute), VALUE_TOL)
            V_hat, _ = solve_adversary_mdp(build_adversary_mdp(cmdp, pol, objective))
            yield _rec(f"fixed_point_vs_lifted_{objective}", i, np.max(np.abs(V_hat - V)), VALUE_TOL)


def temptation_suite(n_instances: int = 20, n_random_policies: int = 200, seed: int = 2):
    """Tempting instances: out-earning the constrained optimum forces ``V_c > kappa``.

    ``lhs`` is kappa and ``rhs`` the smallest cost among sampled policies that
    beat the optimum's reward (holds when ``lhs < rhs``; vacuous if none do).
    """
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        n_states, n_actions = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        cmdp = tempting_instance(rng, n_states, n_actions)
        table = enumerate_deterministic(cmdp)
        _, v_r_star, v_c_star = solve_constrained_optimum(cmdp, table)
        v_r, v_c = list(table.v_r), list(table.v_c)
        for _ in range(n_random_policies):
            pol = random_policy(rng, n_states, n_actions, temperature=3.0)
            vr, vc = evaluate_policy(cmdp, pol, method="direct")
            v_r.append(float(cmdp.mu0 @ vr))
            v_c.append(float(cmdp.mu0 @ vc))
        v_r, v_c = np.asarray(v_r), np.asarray(v_c)
        richer = v_r > v_r_star + 1e-9
        worst = float(v_c[richer].min()) if richer.any() else np.inf
        yield _rec("tempting_richer_is_unsafe", i, cmdp.kappa, worst, cmdp.kappa < worst)
        yield _rec("optimum_on_boundary", i, abs(v_c_star - cmdp.kappa), 1e-9)
    for i in range(n_instances):
        cmdp = non_tempting_instance(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        status = classify_temptation(cmdp).status
        yield _rec("non_tempting_classified", i, float(status != "non_tempting"), 0.0)


def bound_suite(n_instances: int = 50, seed: int = 3):
    """One-step and episodic perturbation bounds, plus the two degenerate cases."""
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        n_states = int(rng.integers(2, 4))
        cmdp, metric, points = embedded_instance(rng, n_states, 2, 0.9, radius=0.5)
        pol = smooth_policy(rng, points, 2)
        cmdp = cmdp.replace(kappa=feasible_kappa(rng, cmdp, pol))
        for s in range(n_states):
            c = verify_one_step_bound(cmdp, pol, s, metric)
            yield _rec("one_step_bound", i, c.lhs, c.rhs + BOUND_SLACK)
        c = verify_episodic_bound(cmdp, pol, metric)
        yield _rec("episodic_bound", i, c.lhs, c.rhs + BOUND_SLACK)

        # epsilon = 0: singleton balls
        flat, metric0, points0 = embedded_instance(rng, n_states, 2, 0.9, radius=0.0)
        pol0 = smooth_policy(rng, points0, 2)
        flat = flat.replace(kappa=feasible_kappa(rng, flat, pol0))
        for s in range(n_states):
            c = verify_one_step_bound(flat, pol0, s, metric0)
            yield _rec("one_step_eps0", i, abs(c.lhs), c.rhs + BOUND_SLACK, c.rhs == 0.0
                       and abs(c.lhs) <= BOUND_SLACK)
        c = verify_episodic_bound(flat, pol0, metric0)
        yield _rec("episodic_eps0", i, c.lhs, c.rhs + BOUND_SLACK, c.rhs == flat.kappa
                   and c.lhs <= flat.kappa + BOUND_SLACK)

        # L = 0: state-independent policy on nontrivial balls
        row = rng.dirichlet(np.ones(2))
        const = TabularPolicy(np.tile(row, (n_states, 1)))
        cmdp_l0 = cmdp.replace(kappa=feasible_kappa(rng, cmdp, const))
        for s in range(n_states):
            c = verify_one_step_bound(cmdp_l0, const, s, metric)
            yield _rec("one_step_L0", i, abs(c.lhs), c.rhs + BOUND_SLACK, c.rhs == 0.0
                       and abs(c.lhs) <= BOUND_SLACK)
        c = verify_episodic_bound(cmdp_l0, const, metric)
        yield _rec("episodic_L0", i, c.lhs, c.rhs + BOUND_SLACK, c.rhs == cmdp_l0.kappa
                   and c.lhs <= cmdp_l0.kappa + BOUND_SLACK)


def mc_safety_suite(n_instances: int = 50, seed: int = 4):
    """Where the MC fixed point is feasible, no adversary in the ball pushes cost past kappa."""
    rng = np.random.default_rng(seed)
    for i in range(n_instances):
        cmdp = random_cmdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), 0.9, max_ball=3)
        pol = random_policy(rng, cmdp.n_states, cmdp.n_actions)
        _, V = optimal_adversary(cmdp, pol, "cost")
        mc_value = float(cmdp.mu0 @ V)
        cmdp = cmdp.replace(kappa=mc_value * (1.0 + rng.uniform(0.0, 0.2)))
        _, brute = brute_force_adversary(cmdp, pol, "cost")
        yield _rec("mc_feasible_implies_safe", i, brute, cmdp.kappa + BOUND_SLACK)


SUITES = {
    "contraction": contraction_suite,
    "fixed_point": fixed_point_suite,
    "temptation": temptation_suite,
    "bounds": bound_suite,
    "mc_safety": mc_safety_suite,
}


def run_suites(names=None, seed: int = 0):
    """Yield records from the named suites (all by default); ``seed`` offsets every suite."""
    for name in (names or SUITES):
        fn = SUITES[name]
        default = fn.__defaults__[-1]
        yield from fn(seed=default + 10 * seed)
