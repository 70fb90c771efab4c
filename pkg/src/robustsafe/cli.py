"""Command line entry point: ``robustsafe {train,attack,sweep,compare,verify}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .adv_train import adversarial_train, train_ppol
from .attackers import ATTACKS
from .baselines import SA_ADVERSARIES, ppol_random_train, sa_ppol_train
from .evaluation import (
    DEFAULT_EPS_GRID,
    CompareConfig,
    RunConfig,
    attack_sweep,
    compare_methods,
    load_run,
)
from .learner import SMOKE_OVERRIDES, TrainConfig
from .tabular.verify import SUITES, run_suites

METHODS = ("ppol", "adv", "sa-ppol", "ppol-random")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _names(text: str) -> tuple[str, ...]:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    unknown = [n for n in names if n not in ATTACKS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown attackers {unknown}")
    return names


def _train_config(args) -> TrainConfig:
    doc = dict(SMOKE_OVERRIDES) if args.preset == "smoke" else {}
    if args.config:
        doc.update(json.loads(Path(args.config).read_text()))
    doc.pop("method", None)
    doc.pop("env", None)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.attacker is not None:
        doc["attacker"] = args.attacker
    if args.sa_adversary is not None:
        doc["sa_adversary"] = args.sa_adversary
    if args.beta is not None:
        doc["beta_kl"] = args.beta
    elif args.method == "sa-ppol":
        doc.setdefault("beta_kl", 1.0)
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.method == "ppol":
        result = train_ppol(cfg, args.out)
    elif args.method == "adv":
        result = adversarial_train(cfg, args.out)
    elif args.method == "ppol-random":
        result = ppol_random_train(cfg, args.out)
    else:
        result = sa_ppol_train(cfg, args.out)
    last = result.metrics[-1]
    print(json.dumps({"out": args.out, "reward_mean": last["reward_mean"],
                      "cost_mean": last["cost_mean"], "lambda": last["lambda"]}))
    return 0


def _attack_options(args) -> dict:
    return {"optimizer": args.optimizer} if args.optimizer else {}


def _sweep(args, attackers, grid) -> int:
    nets, spec, meta = load_run(args.run)
    cfg = RunConfig(spec=spec, method=args.method or meta.get("method", "ppol"),
                    attackers=attackers, eps_grid=grid, episodes=args.episodes,
                    seeds=args.seeds, out_dir=args.out, attack=_attack_options(args))
    for rec in attack_sweep(nets, spec, cfg):
        row = rec.row()
        print(json.dumps({k: row[k] for k in ("attacker", "epsilon", "seed", "reward_mean",
                                               "cost_mean", "j_e", "j_s")}))
    return 0


def cmd_attack(args) -> int:
    return _sweep(args, (args.attack,), (args.eps,))


def cmd_sweep(args) -> int:
    return _sweep(args, args.attack, args.eps_grid)


def cmd_compare(args) -> int:
    runs = {}
    for item in args.run:
        name, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"--run expects NAME=PATH, got {item!r}")
        runs[name] = path
    cfg = CompareConfig(runs=runs, attackers=args.attack, epsilon=args.eps, episodes=args.episodes,
                        seeds=args.seeds, out_dir=args.out, attack=_attack_options(args))
    result = compare_methods(cfg)
    for method, cells in result.grid.items():
        print(json.dumps({"method": method, "cells": cells, "failed": method in result.failed}))
    for method in result.absent:
        print(json.dumps({"method": method, "absent": True}))
    return 0


def cmd_verify(args) -> int:
    sink = open(args.out, "w") if args.out else sys.stdout
    failures = 0
    try:
        for rec in run_suites(args.suite, args.seed):
            doc = rec.to_dict()
            doc["rhs"] = doc["rhs"] if math.isfinite(doc["rhs"]) else None
            sink.write(json.dumps(doc) + "\n")
            failures += not rec.holds
    finally:
        if sink is not sys.stdout:
            sink.close()
    if failures:
        print(f"{failures} check(s) failed", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustsafe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy and write metrics and a checkpoint")
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--preset", choices=("full", "smoke"), default="full")
    p.add_argument("--method", choices=METHODS, default="ppol")
    p.add_argument("--attacker", choices=("mc", "mr", "random", "none"))
    p.add_argument("--sa-adversary", choices=SA_ADVERSARIES)
    p.add_argument("--beta", type=float, help="KL weight for sa-ppol (default 1.0)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    def eval_flags(p):
        p.add_argument("--run", required=True, help="run directory or checkpoint file")
        p.add_argument("--method", help="label for the records (default: from the checkpoint)")
        p.add_argument("--episodes", type=int, default=50)
        p.add_argument("--seeds", type=_ints, default=(0, 1, 2, 3, 4))
        p.add_argument("--optimizer", choices=("sgd", "adam"))
        p.add_argument("--out")

    p = sub.add_parser("attack", help="evaluate one attacker at one epsilon")
    eval_flags(p)
    p.add_argument("--attack", choices=ATTACKS, required=True)
    p.add_argument("--eps", type=float, default=0.05)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="attackers x epsilon grid x seeds")
    eval_flags(p)
    p.add_argument("--attack", type=_names, default=("random", "mad", "amad", "mc", "mr"))
    p.add_argument("--eps-grid", type=_floats, default=DEFAULT_EPS_GRID)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="natural and attacked performance across methods")
    p.add_argument("--run", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--attack", type=_names, default=("amad", "mc", "mr"))
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seeds", type=_ints, default=(0, 1, 2, 3, 4))
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="tabular theory checks as JSONL; nonzero exit on failure")
    p.add_argument("--suite", action="append", choices=tuple(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSONL path (default stdout)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
