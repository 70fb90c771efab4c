"""Exact finite-CMDP workbench: adversarial policy evaluation and bound checks."""

from .bounds import (
    BoundCheck,
    LipschitzError,
    check_contraction,
    local_lipschitz,
    max_unsafe_probability,
    verify_episodic_bound,
    verify_one_step_bound,
)
from .cmdp import (
    AttackMetrics,
    CMDPError,
    MixedPolicy,
    TabularAdversary,
    TabularCMDP,
    TabularPolicy,
    attack_metrics,
)
from .constrained import (
    InfeasibleError,
    PolicyTable,
    Temptation,
    classify_temptation,
    enumerate_deterministic,
    solve_constrained_optimum,
)
from .operators import (
    AdversaryMDP,
    BudgetError,
    bellman_adversary_op,
    bellman_policy_op,
    brute_force_adversary,
    build_adversary_mdp,
    evaluate_policy,
    optimal_adversary,
    solve_adversary_mdp,
)

__all__ = [
    "AdversaryMDP", "AttackMetrics", "BoundCheck", "BudgetError", "CMDPError",
    "InfeasibleError", "LipschitzError", "MixedPolicy", "PolicyTable", "TabularAdversary",
    "TabularCMDP", "TabularPolicy", "Temptation", "attack_metrics", "bellman_adversary_op",
    "bellman_policy_op", "brute_force_adversary", "build_adversary_mdp", "check_contraction",
    "classify_temptation", "enumerate_deterministic", "evaluate_policy", "local_lipschitz",
    "max_unsafe_probability", "optimal_adversary", "solve_adversary_mdp",
    "solve_constrained_optimum", "verify_episodic_bound", "verify_one_step_bound",
]
