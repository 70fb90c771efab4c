"""Evaluation of trained policies under attack: single runs, epsilon sweeps, method grids.

Policies act with their mean action. Within a seed every cell replays the same
environment resets, so attacked and natural returns are paired episode by
episode; only the attacker's own randomness depends on the cell.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .attackers import ATTACKS, AttackConfig, Attacker, amad_threshold
from .nn import load_checkpoint
from .tabular.cmdp import attack_metrics

SCHEMA = "robustsafe-eval/1"
CSV_FIELDS = ("schema", "method", "attacker", "epsilon", "seed", "episodes", "reward_mean",
              "reward_std", "cost_mean", "cost_std", "j_e", "j_s")
DEFAULT_EPS_GRID = (0.0, 0.0125, 0.025, 0.0375, 0.05)
VANILLA = "ppol-vanilla"
FAIL_FRACTION = 0.3


@dataclass(frozen=True)
class RunConfig:
    spec: envs.EnvSpec = field(default_factory=envs.EnvSpec)
    method: str = VANILLA
    attackers: tuple = ("random", "mad", "amad", "mc", "mr")
    eps_grid: tuple = DEFAULT_EPS_GRID
    episodes: int = 50
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str | None = None
    attack: dict = field(default_factory=dict)   # extra AttackConfig fields

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eps_grid)
        if not grid or any(e < 0 for e in grid) or list(grid) != sorted(grid):
            raise ValueError("eps_grid must be nonempty, nonnegative and ascending")
        if self.episodes < 1 or not self.seeds:
            raise ValueError("need at least one episode and one seed")
        unknown = [a for a in self.attackers if a not in ATTACKS]
        if unknown:
            raise ValueError(f"unknown attackers {unknown}")
        object.__setattr__(self, "eps_grid", grid)
        object.__setattr__(self, "attackers", tuple(self.attackers))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass
class EpisodeStats:
    rewards: np.ndarray
    costs: np.ndarray
    observations: np.ndarray | None = None     # [T * episodes, obs_dim], clean states visited

    @property
    def reward_mean(self) -> float:
        return float(self.rewards.mean())

    @property
    def reward_std(self) -> float:
        return float(self.rewards.std())

    @property
    def cost_mean(self) -> float:
        return float(self.costs.mean())

    @property
    def cost_std(self) -> float:
        return float(self.costs.std())


@dataclass
class EvalRecord:
    method: str
    attacker: str
    epsilon: float
    seed: int
    episodes: int
    reward_mean: float
    reward_std: float
    cost_mean: float
    cost_std: float
    j_e: float
    j_s: float
    rewards: list = field(default_factory=list)
    costs: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        return {"schema": SCHEMA, **{k: d[k] for k in CSV_FIELDS[1:]}}


class UniformPolicy:
    """Baseline that ignores the observation and draws actions uniformly from the box."""

    def __init__(self, act_dim: int, max_force: float, rng: np.random.Generator):
        self.act_dim, self.max_force, self.rng = act_dim, max_force, rng

    def mean(self, obs) -> np.ndarray:
        n = np.atleast_2d(obs).shape[0]
        return self.rng.uniform(-self.max_force, self.max_force, size=(n, self.act_dim))


def evaluate(policy, spec: envs.EnvSpec, attacker: Attacker | None = None, episodes: int = 50,
             seed: int = 0, attack_rng: np.random.Generator | None = None,
             keep_observations: bool = False) -> EpisodeStats:
    """Roll out ``episodes`` mean-action episodes under ``pi o nu``.

    Resets depend on ``seed`` only; ``attack_rng`` defaults to one derived from it.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    rng = attack_rng if attack_rng is not None else np.random.default_rng([seed, 1])
    state, obs = envs.reset(spec, seed, episodes)
    rewards, costs = np.zeros(episodes), np.zeros(episodes)
    visited = []
    done = False
    while not done:
        if keep_observations:
            visited.append(obs)
        seen = obs if attacker is None else attacker(obs, rng)
        action = policy.mean(seen)
        try:
            state, r, c, done = envs.step(spec, state, action)
        except envs.EnvFault as err:
            bad = np.flatnonzero(~np.all(np.isfinite(np.atleast_2d(action)), axis=1))
            where = int(bad[0]) if bad.size else -1
            raise envs.EnvFault(f"episode {where}: {err}") from err
        obs = envs.observe(spec, state)
        rewards += r
        costs += c
    observations = np.concatenate(visited) if keep_observations else None
    return EpisodeStats(rewards, costs, observations)


def random_policy_baseline(spec: envs.EnvSpec, episodes: int = 50, seed: int = 0) -> EpisodeStats:
    policy = UniformPolicy(spec.act_dim, spec.max_force, np.random.default_rng([seed, 2]))
    return evaluate(policy, spec, None, episodes, seed)


def cell_rng(seed: int, attacker: str, epsilon: float) -> np.random.Generator:
    """Attack randomness for one sweep cell, derived from its coordinates."""
    return np.random.default_rng([int(seed), zlib.crc32(attacker.encode()),
                                  int(round(epsilon * 1e6))])


def load_run(path) -> tuple[dict, envs.EnvSpec, dict]:
    """Networks, environment spec and metadata from a checkpoint file or run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.json"
    nets, meta = load_checkpoint(path)
    spec = envs.EnvSpec.from_dict(meta["env"]) if "env" in meta else envs.EnvSpec()
    return nets, spec, meta


def _record(method, attacker, eps, seed, stats: EpisodeStats, natural: EpisodeStats) -> EvalRecord:
    m = attack_metrics((natural.reward_mean, natural.cost_mean),
                       (stats.reward_mean, stats.cost_mean))
    return EvalRecord(method, attacker, float(eps), int(seed), len(stats.rewards),
                      stats.reward_mean, stats.reward_std, stats.cost_mean, stats.cost_std,
                      m.j_e, m.j_s, stats.rewards.tolist(), stats.costs.tolist())


def _attack_cells(nets: dict, spec, method, attackers, eps_grid, cfg: RunConfig, seed: int):
    policy = nets["policy"]
    natural = evaluate(policy, spec, None, cfg.episodes, seed,
                       keep_observations="amad" in attackers)
    records = [_record(method, "none", 0.0, seed, natural, natural)]
    threshold = None
    if "amad" in attackers:
        xi = cfg.attack.get("amad_xi", AttackConfig.amad_xi)
        threshold = amad_threshold(nets["v_c"].value(natural.observations), xi)
    for name in attackers:
        for eps in eps_grid:
            acfg = AttackConfig(**{**cfg.attack, "epsilon": eps})
            attacker = Attacker(name, acfg, policy, nets, threshold if name == "amad" else None)
            stats = evaluate(policy, spec, attacker, cfg.episodes, seed, cell_rng(seed, name, eps))
            records.append(_record(method, name, eps, seed, stats, natural))
    return records


def attack_sweep(nets: dict, spec: envs.EnvSpec, cfg: RunConfig,
                 attackers=None, eps_grid=None) -> list[EvalRecord]:
    """Cross product attacker x epsilon x seed plus one natural row per seed.

    AMAD uses a fixed threshold: the ``(1 - xi)`` percentile of ``V_c`` over the
    states visited by the natural run of the same seed.
    """
    attackers = tuple(cfg.attackers if attackers is None else attackers)
    grid = tuple(cfg.eps_grid if eps_grid is None else eps_grid)
    if not grid:
        raise ValueError("eps grid must be nonempty")
    records = []
    for seed in cfg.seeds:
        records += _attack_cells(nets, spec, cfg.method, attackers, grid, cfg, seed)
    if cfg.out_dir is not None:
        write_records(records, cfg.out_dir, "sweep")
    return records


def write_records(records: list[EvalRecord], out_dir, stem: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, jsonl_path = out / f"{stem}.csv", out / f"{stem}.jsonl"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.row())
    with open(jsonl_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"schema": SCHEMA, **asdict(rec)}) + "\n")
    return csv_path, jsonl_path


def recompute_metrics(record: EvalRecord, natural: EvalRecord) -> tuple[float, float]:
    """``(J_E, J_S)`` from the stored raw episode returns."""
    return (float(np.mean(record.costs) - np.mean(natural.costs)),
            float(np.mean(record.rewards) - np.mean(natural.rewards)))


@dataclass(frozen=True)
class CompareConfig:
    runs: dict                                   # method name -> checkpoint file or run dir
    attackers: tuple = ("amad", "mc", "mr")
    epsilon: float = 0.05
    episodes: int = 50
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str | None = None
    attack: dict = field(default_factory=dict)


@dataclass
class Comparison:
    columns: tuple
    grid: dict           # method -> column -> {"reward": mean, "cost": mean}
    records: list
    failed: list         # methods below the fraction of vanilla natural reward
    absent: list         # methods whose checkpoint was missing


def compare_methods(cfg: CompareConfig) -> Comparison:
    """Natural and attacked performance of each method; missing checkpoints are listed, not fatal.

    Each method is attacked through its own critics. Cells average over seeds.
    """
    columns = ("natural",) + tuple(cfg.attackers)
    grid, records, absent = {}, [], []
    for method, path in cfg.runs.items():
        try:
            nets, spec, _ = load_run(path)
        except FileNotFoundError:
            absent.append(method)
            continue
        run_cfg = RunConfig(spec=spec, method=method, attackers=cfg.attackers,
                            eps_grid=(cfg.epsilon,), episodes=cfg.episodes, seeds=cfg.seeds,
                            attack=cfg.attack)
        recs = attack_sweep(nets, spec, run_cfg)
        records += recs
        cells = {}
        for col in columns:
            name = "none" if col == "natural" else col
            rows = [r for r in recs if r.attacker == name]
            cells[col] = {"reward": float(np.mean([r.reward_mean for r in rows])),
                          "cost": float(np.mean([r.cost_mean for r in rows]))}
        grid[method] = cells
    failed = []
    if VANILLA in grid:
        base = grid[VANILLA]["natural"]["reward"]
        failed = [m for m, cells in grid.items()
                  if m != VANILLA and cells["natural"]["reward"] < FAIL_FRACTION * base]
    result = Comparison(columns, grid, records, failed, absent)
    if cfg.out_dir is not None:
        write_comparison(result, cfg.out_dir)
    return result


def write_comparison(result: Comparison, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["schema", "method"] + [f"{c}_{k}" for c in result.columns for k in ("reward", "cost")]
    fields.append("failed")
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for method, cells in result.grid.items():
            row = {"schema": SCHEMA, "method": method, "failed": method in result.failed}
            for c in result.columns:
                row[f"{c}_reward"], row[f"{c}_cost"] = cells[c]["reward"], cells[c]["cost"]
            writer.writerow(row)
    with open(out / "compare.jsonl", "w") as fh:
        for method, cells in result.grid.items():
            fh.write(json.dumps({"schema": SCHEMA, "method": method, "cells": cells,
                                 "failed": method in result.failed}) + "\n")
        for method in result.absent:
            fh.write(json.dumps({"schema": SCHEMA, "method": method, "absent": True}) + "\n")
    write_records(result.records, out, "compare_cells")
