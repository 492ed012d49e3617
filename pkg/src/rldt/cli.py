"""Command-line experiment runner.

Subcommands: gen-data, run, theory, eval.  Output root comes from --out or
the RLDT_OUT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .envs import REF_RETURNS, bandit_dataset, generate_offline, make_env, save_dataset
from .presets import (ALGOS, PRESETS, RunConfig, apply_algo, build_agent,
                      config_json, make_run_config, run_seed, summary_lines)
from .theory import run_theory_suite
from .train import evaluate


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("RLDT_OUT", "runs")
    return Path(root)


def _coerce(current, text: str):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (tuple, list)):
        elems = [t for t in text.split(",") if t]
        inner = type(current[0]) if len(current) else int
        return type(current)(inner(t) for t in elems)
    return text


def _apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise SystemExit(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        obj = cfg
        for p in parts[:-1]:
            if not hasattr(obj, p):
                raise SystemExit(f"unknown config section {p!r} in {key!r}")
            obj = getattr(obj, p)
        leaf = parts[-1]
        if not hasattr(obj, leaf):
            raise SystemExit(f"unknown config key {key!r}")
        setattr(obj, leaf, _coerce(getattr(obj, leaf), value))
    if "algo" in {o.split("=", 1)[0] for o in overrides}:
        apply_algo(cfg, cfg.algo)
    return cfg


def _load_config(args) -> RunConfig:
    if args.preset:
        cfg = make_run_config(args.preset, args.algo)
    else:
        cfg = apply_algo(RunConfig(), args.algo or "td3+odt")
    if args.config:
        blob = json.loads(Path(args.config).read_text())
        _merge_json(cfg, blob)
        apply_algo(cfg, cfg.algo)
    if args.seed:
        cfg.seeds = list(args.seed)
    cfg = _apply_overrides(cfg, args.override or [])
    cfg.validate()
    return cfg


def _merge_json(obj, blob: dict):
    for key, value in blob.items():
        if not hasattr(obj, key):
            raise SystemExit(f"unknown config key {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _merge_json(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)


def cmd_gen_data(args) -> int:
    out = Path(args.file)
    if args.env == "bandit":
        ds = bandit_dataset(args.seed, literal_interval=args.literal_interval)
    else:
        env = make_env(args.env, seed=args.seed + 901)
        ds = generate_offline(env, args.behavior, args.n_steps, seed=args.seed + 902)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {ds.n_steps} steps / {len(ds.trajectories)} trajectories to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args) / (args.name or f"{cfg.preset}-{cfg.algo}".replace("+", "_"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_json(cfg))
    results = []
    for seed in cfg.seeds:
        res = run_seed(cfg, seed, out)
        results.append(res)
        print(f"seed {seed}: initial {res.initial_eval:.3f} -> "
              f"final {res.final_eval:.3f} (best {res.best_eval:.3f})")
    ref = REF_RETURNS.get(cfg.env)
    lines = summary_lines(f"{cfg.preset}/{cfg.algo}", results, ref)
    header = "label,seed,final(+delta),final_raw,initial_raw,best_raw"
    (out / "summary.csv").write_text("\n".join([header, *lines]) + "\n")
    print((out / "summary.csv").read_text().rstrip())
    return 0


def cmd_theory(args) -> int:
    report = run_theory_suite(n_mdps=args.n_mdps, bandit_seed=args.seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theory_report.csv"
    report.write(path)
    for c in report.checks:
        print(f"{'pass' if c.passed else 'FAIL':4s} {c.name} "
              f"bound={c.bound!r} empirical={c.empirical!r}")
    print(f"report written to {path}")
    return 0 if report.all_passed else 1


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    agent = build_agent(cfg, cfg.seeds[0])
    agent.load(args.checkpoint)
    env = make_env(cfg.env, seed=args.seed)
    mean, std = evaluate(agent, env, args.episodes, cfg.train.rtg_eval,
                         cfg.train.T_eval)
    print(f"eval over {args.episodes} episodes: mean {mean!r} std {std!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rldt", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="write an offline dataset file")
    g.add_argument("--env", default="bandit", choices=("bandit", "pointmass"))
    g.add_argument("--behavior", default="random",
                   choices=("random", "scripted-suboptimal", "oracle"))
    g.add_argument("--n-steps", type=int, default=10000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--literal-interval", action="store_true",
                   help="bandit only: sample the left band on (-1, 0.95)")
    g.add_argument("--file", required=True, help="output dataset path")
    g.set_defaults(fn=cmd_gen_data)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--algo", choices=ALGOS)
    common.add_argument("--seed", type=int, action="append",
                        help="repeatable; overrides the config seed list")
    common.add_argument("--out", help="output root (default $RLDT_OUT or ./runs)")
    common.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted config override, repeatable")

    r = sub.add_parser("run", parents=[common], help="pretrain + finetune per seed")
    r.add_argument("--name", help="run directory name")
    r.set_defaults(fn=cmd_run)

    t = sub.add_parser("theory", help="run every analysis check, write the report")
    t.add_argument("--out", help="output root (default $RLDT_OUT or ./runs)")
    t.add_argument("--n-mdps", type=int, default=24)
    t.add_argument("--seed", type=int, default=0, help="bandit dataset seed")
    t.set_defaults(fn=cmd_theory)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
