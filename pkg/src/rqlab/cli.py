"""Command line entry point: ``rqlab {solve,customize,plan,run,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rqlab.envs import EnvSpec, make_env
from rqlab.harness import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_METHOD,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    MethodSpec,
    PriorSpec,
    build_prior,
    customize,
    emit_report,
    load_report,
    render_csv,
    render_json,
    run_experiment,
)
from rqlab.mcts import MctsParams, plan, root_distribution
from rqlab.mdp import RewardSelector, load_mdp
from rqlab.residual import CustomizationParams
from rqlab.soft import NonConvergenceError, SoftSolverParams, boltzmann_policy, soft_value_iteration

log = logging.getLogger("rqlab")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _env_and_prior(args):
    """Env spec, prior spec and customization params from --config or flags."""
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        return cfg.env, cfg.prior, cfg.customization, cfg
    if not args.env:
        raise ConfigError("give --env NAME or --config PATH")
    try:
        cparams = CustomizationParams(omega_prime=args.omega_prime, alpha_hat=args.alpha_hat)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec = EnvSpec(args.env, reset=args.reset)
    return spec, PriorSpec(alpha=args.prior_alpha), cparams, None


def cmd_solve(args) -> int:
    mdp = load_mdp(args.mdp)
    if args.channel == "combined":
        selector = RewardSelector.combined(args.omega)
    else:
        selector = RewardSelector(args.channel)
    q = soft_value_iteration(mdp, selector, SoftSolverParams(alpha=args.alpha))
    out = Path(args.out)
    _write_json(out / "q.json", q.tolist())
    _write_json(out / "policy.json", boltzmann_policy(q, args.alpha).tolist())
    print(f"wrote {out / 'q.json'} and {out / 'policy.json'}")
    return EXIT_OK


def cmd_customize(args) -> int:
    spec, prior_spec, cparams, cfg = _env_and_prior(args)
    if args.method:
        method = MethodSpec.from_dict({"name": args.method})
    elif cfg is not None:
        method = cfg.methods[0]
    else:
        raise ConfigError("give --method")
    env, mdp = make_env(spec)
    prior = build_prior(prior_spec, mdp)
    try:
        policy = customize(method, env, prior, cparams, args.seed)
    except (NonConvergenceError, ValueError) as exc:
        print(f"{method.display} failed: {exc}", file=sys.stderr)
        return EXIT_METHOD
    out = Path(args.out)
    _write_json(out / "prior.json", prior.tolist())
    _write_json(out / "policy.json", policy.tolist())
    print(f"{method.display}: wrote {out / 'policy.json'}")
    return EXIT_OK


def cmd_plan(args) -> int:
    spec, prior_spec, cparams, _ = _env_and_prior(args)
    env, mdp = make_env(spec)
    prior = build_prior(prior_spec, mdp)
    try:
        params = MctsParams(iter_max=args.iter_max, horizon=args.horizon, epsilon=args.epsilon,
                            omega_prime=cparams.omega_prime, alpha_hat=cparams.alpha_hat,
                            root_rule=args.root_rule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    state = args.state
    if state is None:
        state = int(np.argmax(env.initial_distribution))
    tree, action = plan(state, mdp, prior, params, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tree.dump(out / "tree.json")
    dist = root_distribution(tree.root, prior, params)
    print(json.dumps({"state": state, "decoded": repr(env.decode(state)), "action": action,
                      "action_name": env.model.action_names[action],
                      "root_policy": dist.tolist(), "nodes": tree.node_count}))
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run needs --config PATH")
    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.format:
        overrides["formats"] = (args.format,)
    if overrides:
        cfg = ExperimentConfig(**{**cfg.__dict__, **overrides})
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    table = run_experiment(cfg)
    try:
        paths = emit_report(table, out, cfg.formats)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(f"wrote {p}")
    for label, err in table.failures.items():
        print(f"method {label} failed: {err}", file=sys.stderr)
    return EXIT_METHOD if table.failures else EXIT_OK


def cmd_report(args) -> int:
    table = load_report(args.input)
    fmt = args.format or "csv"
    if args.out:
        for p in emit_report(table, args.out, (fmt,)):
            print(f"wrote {p}")
    else:
        sys.stdout.write(render_csv(table) if fmt == "csv" else render_json(table))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("-v", "--verbose", action="store_true")

    env_opts = argparse.ArgumentParser(add_help=False)
    env_opts.add_argument("--env", help="environment name")
    env_opts.add_argument("--reset", help="environment reset mode")
    env_opts.add_argument("--prior-alpha", type=float, default=1.0)
    env_opts.add_argument("--omega-prime", type=float, default=1.0)
    env_opts.add_argument("--alpha-hat", type=float, default=1.0)

    parser = argparse.ArgumentParser(prog="rqlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="soft-optimal Q of a serialized MDP")
    p.add_argument("mdp", help="MDP JSON file")
    p.add_argument("--channel", choices=("basic", "addon", "combined"), default="basic")
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_solve, out_default="solve-out")

    p = sub.add_parser("customize", parents=[common, env_opts],
                       help="run one customization method on one env")
    p.add_argument("--method", help="method name, e.g. rql-exact")
    p.set_defaults(func=cmd_customize, out_default="customize-out")

    p = sub.add_parser("plan", parents=[common, env_opts], help="one MCTS call")
    p.add_argument("--state", type=int, default=None, help="root state index")
    p.add_argument("--iter-max", type=int, default=150)
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--root-rule", choices=("argmax", "sample"), default="argmax")
    p.set_defaults(func=cmd_plan, out_default="plan-out")

    p = sub.add_parser("run", parents=[common], help="full experiment from --config")
    p.set_defaults(func=cmd_run, out_default=None)

    p = sub.add_parser("report", parents=[common], help="re-render a stored JSON report")
    p.add_argument("input", help="metrics JSON written by run")
    p.set_defaults(func=cmd_report, out_default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out is None and args.out_default is not None:
        args.out = args.out_default
    if args.seed is None and args.command != "run":
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # malformed inputs (bad env name, bad MDP file contents, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
