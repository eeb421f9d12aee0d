"""Command-line entry point: ``train``, ``sweep``, ``verify`` and ``eval``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .certify import format_report, run_suite
from .config import ExperimentConfig, config_keys, format_config, load_config, set_key
from .envs import CartPole, TabularEnv, load_mdp
from .harness import TrainingError, evaluate, format_grid, save_policy, sweep, train, write_curve
from .nn import load_checkpoint
from .policy import CategoricalPolicy, GaussianPolicy


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    """Turn ``--section.key value`` / ``--section.key=value`` pairs into tuples."""
    out = []
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or "." not in tok:
            raise SystemExit(f"unrecognized argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            try:
                value = next(it)
            except StopIteration:
                raise SystemExit(f"missing value for {tok}") from None
        out.append((key, value))
    return out


def build_config(path, overrides) -> ExperimentConfig:
    config = load_config(path) if path else ExperimentConfig()
    known = set(config_keys(config))
    for key, value in overrides:
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
        set_key(config, key, value)
    config.validate()
    return config


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_train(args, overrides) -> int:
    config = build_config(args.config, overrides)
    out = Path(config.run.out_dir or "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config), encoding="utf-8")
    try:
        result = train(config, observer=_progress(config.run.iterations) if not args.quiet else None)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_curve(out / "curve.csv", result.records)
    save_policy(out / "policy.ckpt", result)
    last = result.records[-1]
    print(f"done: {len(result)} iterations, final mean cost {last.mean_cost:.2f}, "
          f"mean episode length {last.mean_ep_len:.1f}; wrote {out}")
    return 0


def _progress(total):
    def observer(event, **data):
        if event == "iteration_start" and data["iteration"] % 10 == 0:
            print(f"iteration {data['iteration']}/{total}", file=sys.stderr)
    return observer


def cmd_sweep(args, overrides) -> int:
    config = build_config(args.config, overrides)
    seeds = [int(s) for s in _floats(args.seeds)]
    result = sweep(config, _floats(args.gammas), _floats(args.lambdas), seeds,
                   out_dir=args.out or config.run.out_dir or "runs/sweep", workers=args.workers)
    print(f"cost after {config.run.iterations} iterations, averaged over {len(seeds)} seeds")
    print(format_grid(result))
    g, lam = result.best_cell()
    print(f"best cell: gamma={g:g} lambda={lam:g}")
    for (gi, li), errs in result.errors.items():
        for seed, msg in errs:
            print(f"failed: gamma={result.gammas[gi]:g} lambda={result.lambdas[li]:g} seed={seed}: {msg}",
                  file=sys.stderr)
    return 1 if result.errors else 0


def cmd_verify(args, overrides) -> int:
    if overrides:
        raise SystemExit("verify takes no config overrides")
    report = run_suite(tol=args.tol, seed=args.seed)
    print(format_report(report))
    print("all checks passed" if report.passed else "VERIFICATION FAILED")
    return 0 if report.passed else 1


def cmd_eval(args, overrides) -> int:
    kind, spec, values = load_checkpoint(args.checkpoint)
    if kind == "gaussian":
        policy = GaussianPolicy(spec)
        env = CartPole(max_steps=args.max_steps)
    elif kind == "categorical":
        if not args.mdp:
            raise SystemExit("evaluating a categorical policy needs --mdp FILE")
        policy = CategoricalPolicy(spec)
        env = TabularEnv(load_mdp(args.mdp, horizon_cap=args.max_steps))
    else:
        raise SystemExit(f"unknown checkpoint kind {kind!r}")
    if len(values) != policy.n_params:
        raise SystemExit(f"checkpoint holds {len(values)} values, policy needs {policy.n_params}")
    stats = evaluate(env, policy, np.asarray(values), args.episodes, args.max_steps, args.seed)
    print(f"episodes {stats['episodes']}  mean_ep_len {stats['mean_ep_len']:.1f}  mean_cost {stats['mean_cost']:.2f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaepg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy; extra --section.key VALUE flags override the config")
    p.add_argument("--config", help="key = value config file (defaults used if omitted)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over a gamma x lambda grid")
    p.add_argument("--config")
    p.add_argument("--gammas", required=True, help="e.g. '0.9 0.96 0.99 1'")
    p.add_argument("--lambdas", required=True)
    p.add_argument("--seeds", default="0 1 2 3 4")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="output directory (default run.out_dir or runs/sweep)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the exact tabular certification suite")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="run the mean action of a saved policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mdp", help="MDP file for categorical (tabular) checkpoints")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _split_overrides(extra)
        return args.func(args, overrides)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
