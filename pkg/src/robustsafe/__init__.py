"""Safe RL under observational adversaries: attackers, robust PPO-Lagrangian, tabular checks."""

__version__ = "0.1.0"
