"""Command-line entry point.

Subcommands::

    cmba train-dynamics --out model.bin [--samples N --epochs E --seed S]
    cmba clone-policy   --out policy.bin
    cmba attack         --config exp.yaml --method cmba --eps 0.1 --traces DIR
    cmba sweep          --config exp.yaml --seed 0
    cmba report         --results results.csv --out DIR

Values come from the built-in defaults, then the config file, then any
flag given explicitly on the command line.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import attack, dynlearn, harness, netcore, policy
from .errors import ConfigurationError, ModelFormatError
from .swarmsim import EnvSpec
from .victimselect import SelectionConfig


def _float_list(text):
    return tuple(float(v) for v in text.split(","))


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def _add_env_flags(p):
    p.add_argument("--n-agents", type=int, help="number of agents (default 4)")
    p.add_argument("--horizon", type=int, help="episode horizon T (default 200)")


def _env_from_args(args, base=None):
    base = base or EnvSpec()
    kw = {}
    if getattr(args, "n_agents", None) is not None:
        kw["n_agents"] = args.n_agents
    if getattr(args, "horizon", None) is not None:
        kw["horizon"] = args.horizon
    return replace(base, **kw) if kw else base


def _add_experiment_flags(p):
    p.add_argument("--config", help="YAML experiment file")
    _add_env_flags(p)
    p.add_argument("--policy", help="'scripted' or a cloned policy file")
    p.add_argument("--dynamics", help="dynamics model file")
    p.add_argument("--norm", choices=("inf", "1"), help="perturbation norm")
    p.add_argument("--strategy", choices=("fixed", "random", "greedy", "learned", "learned_plus_alg1"))
    p.add_argument("--n-v", type=int, help="number of victims")
    p.add_argument("--victims", type=_int_list, help="comma-separated fixed victim indices")
    p.add_argument("--steps", type=int, help="attack iterations K")
    p.add_argument("--step-scale", type=float, help="PGD step size as a multiple of eps")
    p.add_argument("--episodes", type=int)
    p.add_argument("--output-dir")


def _experiment_from_args(args):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    kw = {}
    env = _env_from_args(args, cfg.env)
    if env != cfg.env:
        kw["env"] = env
    for key in ("policy", "dynamics", "episodes", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            kw[key] = value
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "methods", None):
        kw["methods"] = tuple(args.methods.split(","))
    if getattr(args, "workers", None) is not None:
        kw["workers"] = args.workers
    if args.strategy or args.n_v or args.victims:
        base = cfg.selections[0]
        strategy = args.strategy or base.strategy
        agents = args.victims if args.victims is not None else (base.agents if strategy == "fixed" else None)
        n_v = args.n_v or (len(agents) if agents else base.n_v)
        kw["selections"] = (SelectionConfig(n_v, strategy, agents),)
    eps_grid = getattr(args, "eps", None)
    if eps_grid is not None or args.norm:
        norm = args.norm or cfg.budgets[0].p
        grid = eps_grid or tuple(b.eps for b in cfg.budgets)
        kw["budgets"] = tuple(attack.Budget(norm, e) for e in grid)
    att = {}
    if args.steps is not None:
        att["steps"] = args.steps
    if args.step_scale is not None:
        att["step_scale"] = args.step_scale
    if att:
        kw["attack"] = replace(cfg.attack, **att)
    return replace(cfg, **kw) if kw else cfg


# -- subcommands -------------------------------------------------------------------

def cmd_train_dynamics(args):
    spec = _env_from_args(args)
    policies = None
    if args.policy and args.policy != "scripted":
        policies = [policy.DensePolicy(netcore.load_net(args.policy))] * spec.n_agents
    data = dynlearn.collect_transitions(spec, args.kind, args.samples, args.seed, policies, args.mix)
    if args.data_csv:
        dynlearn.save_csv(data, args.data_csv)
    cfg = replace(dynlearn.DEFAULT_DYNAMICS_TRAIN, epochs=args.epochs,
                  lr_grid=args.lr_grid or dynlearn.DEFAULT_DYNAMICS_TRAIN.lr_grid, seed=args.seed)
    hidden = tuple(args.hidden) if args.hidden else (128, 128, 128)
    model = dynlearn.train_dynamics(data, cfg, hidden=hidden, seed=args.seed)
    dynlearn.save_model(model, args.out)
    test = dynlearn.collect_transitions(spec, args.kind, max(1000, args.samples // 10), args.seed + 1,
                                        policies, args.mix).nonterminal()
    print(f"samples {len(data)}  lr {model.meta['learning_rate']:g}  "
          f"holdout mse {model.test_mse:.3e}  fresh-test mse {dynlearn.eval_mse(model, test):.3e}  "
          f"identity mse {dynlearn.identity_mse(test):.3e}")
    print(f"wrote {args.out}")
    return 0


def cmd_clone_policy(args):
    spec = _env_from_args(args)
    data = dynlearn.collect_transitions(spec, "trained_policy", args.samples, args.seed)
    cfg = netcore.TrainConfig(epochs=args.epochs, lr_grid=args.lr_grid or netcore.DEFAULT_LR_GRID,
                              seed=args.seed)
    pol, err = policy.behavior_clone(policy.expert(), data.obs, cfg, seed=args.seed)
    netcore.save_net(pol.net, args.out)
    print(f"holdout mse {err:.3e}")
    print(f"wrote {args.out}")
    return 0


def cmd_attack(args):
    cfg = _experiment_from_args(args)
    lab = harness.Lab.from_config(replace(cfg, methods=(args.method,)))
    budget = cfg.budgets[0]
    rec = harness.run_episode(lab, args.method, budget, args.seed, cfg.selections[0])
    print(f"method {args.method}  {budget.label} eps {budget.eps:g}  seed {args.seed}  "
          f"length {rec.length}  reward {rec.total_reward:.6f}")
    if args.traces:
        for path in harness.emit_traces(rec, args.traces, cfg.env.n_agents):
            print(f"wrote {path}")
    return 0


def cmd_sweep(args):
    cfg = _experiment_from_args(args)
    cells = harness.sweep_budget(cfg)
    for row in harness.cells_to_table(cells):
        print(f"{row['method']:>9} {row['norm']:>4} eps {row['eps']:<6g} {row['victims']:<20} "
              f"mean {row['mean_reward']:.4f}  std {row['std_reward']:.4f}  {row['status']}")
    print(f"wrote {cfg.output_dir}")
    failed = sum(c.status != "ok" for c in cells)
    return 1 if failed == len(cells) else 0


def cmd_report(args):
    table = harness.read_results_csv(args.results)
    out = Path(args.out or Path(args.results).parent)
    for path in harness.emit_report(table, out):
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cmba", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-dynamics", help="collect transitions and fit the dynamics model")
    _add_env_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=dynlearn.SOURCES, default="mixed")
    p.add_argument("--mix", type=float, default=0.5, help="trained-policy share of a mixed dataset")
    p.add_argument("--lr-grid", type=_float_list)
    p.add_argument("--hidden", type=_int_list, help="hidden layer widths, e.g. 128,128,128")
    p.add_argument("--policy", help="cloned policy file for the trained-policy share")
    p.add_argument("--data-csv", help="also write the transitions as CSV")
    p.set_defaults(func=cmd_train_dynamics)

    p = sub.add_parser("clone-policy", help="behaviour-clone the scripted expert into a network")
    _add_env_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-grid", type=_float_list)
    p.set_defaults(func=cmd_clone_policy)

    p = sub.add_parser("attack", help="run one episode and optionally record traces")
    _add_experiment_flags(p)
    p.add_argument("--method", choices=harness.METHODS, default="cmba")
    p.add_argument("--eps", type=_float_list, help="budget (first value used)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", help="directory for states.csv and perturbations.csv")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run every method x budget x victim cell")
    _add_experiment_flags(p)
    p.add_argument("--seed", type=int, required=True, help="base seed; episode k uses seed + k")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(harness.METHODS))
    p.add_argument("--eps", type=_float_list, help="comma-separated budget grid")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render SVG plots from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ModelFormatError, FileNotFoundError) as exc:
        print(f"cmba: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
