"""Command-line interface: ``trafficdqn <solve|train|eval|compare|greenwave|render> ...``.

On failure a single line ``error: <Type>: <message>`` goes to stderr and the
exit status is nonzero (2 for configuration errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML experiment config (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="training seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; may be repeated")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trafficdqn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact optimal policy for the single intersection")
    _common(p)

    p = sub.add_parser("train", help="train a DQN agent")
    _common(p)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint and baselines on paired seeds")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", action="append", dest="policies",
                   help="baseline name (always-continue, uniform-random, fixed-cycle:G, "
                        "fixed-cycle-sweep, oracle); may be repeated")

    p = sub.add_parser("compare", help="DQN greedy policy against the exact optimum")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--oracle", help="oracle.json from 'solve' (re-solved if omitted)")

    p = sub.add_parser("greenwave", help="count green-wave chains against a baseline")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", default="uniform-random")

    p = sub.add_parser("render", help="print text frames of a recorded trajectory")
    p.add_argument("trajectory", help="trajectory.jsonl written by 'eval'")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--stop", type=int)
    return ap


def _run(args) -> object:
    from . import experiments

    if args.command == "render":
        from .render import render_ascii
        sys.stdout.write(render_ascii(experiments.load_trajectory(args.trajectory), args.start, args.stop))
        return None
    cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
    if args.command == "solve":
        return experiments.run_solve(cfg)
    if args.command == "train":
        progress = None
        if not args.quiet:
            def progress(k, m):
                if k % (10 * cfg.train.metrics_window) == 0:
                    print(f"step {k}: windowed return {m.window_returns[-1][1]:.2f}", file=sys.stderr)
        return experiments.run_train(cfg, progress)
    if args.command == "eval":
        return experiments.run_eval(cfg, args.checkpoint, args.policies)
    if args.command == "compare":
        res = experiments.run_compare(cfg, args.checkpoint, args.oracle)
        return {k: v for k, v in res.items() if k != "mismatches"}
    if args.command == "greenwave":
        res = experiments.run_greenwave(cfg, args.checkpoint, args.baseline)
        return {k: v for k, v in res.items() if k != "per_seed"}
    raise AssertionError(args.command)


def _brief(result) -> dict:
    if not isinstance(result, dict):
        return result
    return {k: (v["mean_discounted_cost"] if isinstance(v, dict) and "mean_discounted_cost" in v else v)
            for k, v in result.items()}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = _run(args)
    except ConfigError as e:
        print(f"error: ConfigError: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every failure becomes one parseable line
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(_brief(result), indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
