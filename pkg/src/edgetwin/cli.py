"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import metrics
from .agents import DivergenceError, DQNScheduler, GreedyScheduler, RandomScheduler
from .config import ConfigError, apply_overrides, config_hash, load_run_config, load_scenario_spec
from .env import EmptyEpisodeError, SchedulingEnv
from .topology import InvalidInputError
from .traffic import generate_scenario

log = logging.getLogger("edgetwin")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def cmd_generate(args) -> int:
    spec = load_scenario_spec(args.config)
    if args.seed is not None:
        spec = spec.replace(seed=int(args.seed))
    if args.pr is not None:
        spec = spec.replace(penetration_ratio=float(args.pr))
    spec.validate()
    scenario = generate_scenario(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.")
    os.close(fd)
    scenario.write(tmp)
    os.replace(tmp, out)
    cavs = sum(t.is_cav for t in scenario.traces)
    print(f"vehicles: {spec.vehicle_count}")
    print(f"CAVs: {cavs} (PR {spec.penetration_ratio})")
    print(f"servers: {scenario.topology.n_servers}")
    for s in scenario.topology.servers:
        cpu, gpu, store = s.capacity
        print(f"  server {s.id}: cpu {cpu:.4g} gpu {gpu:.4g} store {store:.4g} ops/s")
    print(f"CAV samples: {scenario.n_samples}")
    print(f"wrote {out}")
    return EXIT_OK


def _training_envs(cfg):
    return [
        SchedulingEnv(cfg.scenario.replace(penetration_ratio=pr), **cfg.env_kwargs()) for pr in cfg.training.prs
    ]


def cmd_train(args) -> int:
    cfg = apply_overrides(load_run_config(args.config), out=args.out, episodes=args.episodes)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.checkpoint_path
    curve_path = out / "curve.csv"
    random_state = int(args.seed) if args.seed is not None else cfg.training.random_state
    envs = _training_envs(cfg)

    prior_curve = []
    if args.resume and ckpt.exists():
        model = DQNScheduler.load(ckpt)
        model.set_params(warm_start=True, n_episodes=cfg.training.episodes)
        if curve_path.exists():
            prior_curve = [r for r in _read_curve(curve_path)]
        log.info("resuming from %s after %d episodes", ckpt, len(model.curve_))
    else:
        model = DQNScheduler(
            n_servers=cfg.scenario.server_count,
            random_state=random_state,
            n_episodes=cfg.training.episodes,
            **cfg.dqn,
        )
    n_prior = len(getattr(model, "curve_", []))
    seeds = [cfg.training.seed_offset + i for i in range(n_prior + cfg.training.episodes)]
    if cfg.training.episodes == 0:
        _atomic_write(curve_path, metrics.to_csv(prior_curve, metrics.CURVE_FIELDS))
        print("0 episodes: empty learning curve, no checkpoint")
        return EXIT_OK
    try:
        model.fit(envs, seeds=seeds)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        if hasattr(model, "last_good_params_"):
            model.save(ckpt, params=model.last_good_params_)
            print(f"last good weights kept in {ckpt}", file=sys.stderr)
        return EXIT_RUNTIME
    curve = prior_curve + [r for r in model.curve_ if r is not None]
    _atomic_write(curve_path, metrics.to_csv(curve, metrics.CURVE_FIELDS))
    model.save(ckpt)
    model.save(out / "best.dqn", params=model.best_params_)
    summary = {
        "command": "train",
        "config_hash": config_hash(cfg),
        "random_state": random_state,
        "episodes": len(curve),
        "final_mean_reward": curve[-1]["mean_reward"],
        "best_mean_reward": model.best_reward_,
    }
    _atomic_write(out / "train_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"trained {len(curve)} episodes; checkpoint {ckpt}; curve {curve_path}")
    return EXIT_OK


def _read_curve(path):
    import csv

    with open(path, newline="") as fh:
        return [
            {"episode": int(r["episode"]), "mean_reward": float(r["mean_reward"]), "loss": float(r["loss"]), "epsilon": float(r["epsilon"])}
            for r in csv.DictReader(fh)
        ]


def build_policies(cfg) -> dict:
    n = cfg.scenario.server_count
    policies = {}
    for name in cfg.policies:
        if name == "random":
            policies[name] = RandomScheduler(n, random_state=0)
        elif name == "greedy":
            policies[name] = GreedyScheduler(n, service_time=cfg.env.service_time)
        elif name == "dqn":
            if not cfg.checkpoint_path.exists():
                raise ConfigError(f"dqn policy requested but checkpoint {cfg.checkpoint_path} does not exist")
            policies[name] = DQNScheduler.load(cfg.checkpoint_path)
    return policies


def _run_sweep(cfg, command: str) -> int:
    policies = build_policies(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_dir = None
    if cfg.write_traces:
        trace_dir = out / "traces"
        trace_dir.mkdir(exist_ok=True)
    rows, agg = metrics.pr_sweep(
        policies, cfg.scenario, cfg.prs, cfg.seeds, cfg.env_kwargs(), trace_dir=trace_dir, jobs=cfg.jobs
    )
    _atomic_write(out / "sweep.csv", metrics.to_csv(rows, metrics.SWEEP_FIELDS))
    agg_fields = ["policy", "pr", "n_seeds"] + [f"{k}_{s}" for k in metrics.AGG_METRICS for s in ("mean", "std")]
    _atomic_write(out / "sweep_agg.csv", metrics.to_csv(agg, agg_fields))
    summary = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "aggregates": agg,
    }
    _atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for row in agg:
        err = row["sync_error_mean"]
        print(
            f"{row['policy']:>7} pr={row['pr']:.2f} sync_error={'NA' if err is None else f'{err:.3f}'} "
            f"sched_success={row['sched_success_mean']:.3f} max_util={row['max_util_mean']:.3f}"
        )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = apply_overrides(load_run_config(args.config), out=args.out, seed=args.seed, policy=args.policy, pr=args.pr)
    return _run_sweep(cfg, "evaluate")


def cmd_sweep(args) -> int:
    cfg = apply_overrides(load_run_config(args.config), out=args.out, seed=args.seed, policy=args.policy, pr=args.pr)
    return _run_sweep(cfg, "sweep")


def cmd_replay(args) -> int:
    """Recompute every sweep row from its step trace and compare exactly."""
    out = Path(args.out) if args.out else None
    sweep = Path(args.sweep) if args.sweep else (out / "sweep.csv" if out else None)
    trace_dir = Path(args.traces) if args.traces else (out / "traces" if out else None)
    if sweep is None or trace_dir is None:
        raise ConfigError("replay needs --out or both --sweep and --traces")
    if not sweep.is_file():
        raise ConfigError(f"{sweep}: no such file")
    mismatches = 0
    rows = metrics.read_sweep_csv(sweep)
    for row in rows:
        path = trace_dir / f"{row['policy']}_pr{row['pr']}_seed{row['seed']}.jsonl"
        if not path.is_file():
            raise ConfigError(f"{path}: missing trace")
        recomputed = metrics.metrics_from_trace(metrics.read_trace(path)).row()
        for key in metrics.AGG_METRICS:
            if recomputed[key] != row[key]:
                mismatches += 1
                print(f"mismatch {path.name} {key}: sweep {row[key]!r} trace {recomputed[key]!r}")
    print(f"replayed {len(rows)} rows, {mismatches} mismatches")
    return EXIT_OK if mismatches == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgetwin", description="Edge provisioning simulator for vehicle digital twins")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a scenario (topology + traces)")
    p.add_argument("--config", required=True, help="scenario spec YAML (or a run config with a scenario section)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--seed")
    p.add_argument("--pr")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the DQN scheduler")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed")
    p.add_argument("--episodes")
    p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
    p.set_defaults(func=cmd_train)

    for name, func in (("evaluate", cmd_evaluate), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} policies over penetration ratios and seeds")
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", help="comma-separated evaluation seeds")
        p.add_argument("--policy", help="comma-separated subset of random,greedy,dqn")
        p.add_argument("--pr", help="comma-separated penetration ratios")
        p.set_defaults(func=func)

    p = sub.add_parser("replay", help="recompute sweep.csv from exported step traces")
    p.add_argument("--out", help="sweep output directory")
    p.add_argument("--sweep")
    p.add_argument("--traces")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyEpisodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
