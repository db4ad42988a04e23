"""Episode metrics, paired evaluation and penetration-ratio sweeps.

Every metric is computed from the exported step trace, never from live
environment state, so ``metrics_from_trace`` applied to a trace read back from
disk reproduces the sweep table exactly.

Output schema notes:

* ``sync_error`` is the fraction of *admitted* tasks whose end-to-end latency
  exceeded the threshold; it is ``NA`` when nothing was admitted. Dropped
  tasks count only against ``sched_success``.
* ``max_util`` is the maximum over decision steps and servers of a server's
  mean utilization across its three dimensions.
* ``mean_util`` is the step average of the all-server mean utilization.
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

from .env import SchedulingEnv

SWEEP_FIELDS = ("policy", "pr", "seed", "sync_error", "sched_success", "max_util", "mean_util", "mean_reward")
AGG_METRICS = ("sync_error", "sched_success", "max_util", "mean_util", "mean_reward")
CURVE_FIELDS = ("episode", "mean_reward", "loss", "epsilon")
NA = "NA"


@dataclass
class EpisodeMetrics:
    sync_error_rate: float | None
    sched_success_rate: float
    max_utilization: float
    mean_utilization_time_avg: float
    mean_reward: float
    tasks: int
    admits: int
    drops: int
    violations: int

    def row(self) -> dict:
        return {
            "sync_error": self.sync_error_rate,
            "sched_success": self.sched_success_rate,
            "max_util": self.max_utilization,
            "mean_util": self.mean_utilization_time_avg,
            "mean_reward": self.mean_reward,
        }


def metrics_from_trace(trace) -> EpisodeMetrics:
    trace = list(trace)
    if not trace:
        raise ValueError("empty step trace")
    tasks = len(trace)
    admits = sum(1 for r in trace if r["admitted"])
    violations = sum(1 for r in trace if r["admitted"] and not r["within"])
    return EpisodeMetrics(
        sync_error_rate=violations / admits if admits else None,
        sched_success_rate=admits / tasks,
        max_utilization=max(max(r["server_utilization"]) for r in trace),
        mean_utilization_time_avg=math.fsum(r["utilization"] for r in trace) / tasks,
        mean_reward=math.fsum(r["reward"] for r in trace) / tasks,
        tasks=tasks,
        admits=admits,
        drops=tasks - admits,
        violations=violations,
    )


def run_episode(policy, env: SchedulingEnv, seed=None):
    """Roll out ``policy`` greedily (no exploration); returns the step trace."""
    env.record = True
    state = env.reset(seed)
    if hasattr(policy, "begin_episode"):
        policy.begin_episode(env.scenario.spec.seed)
    while True:
        out = env.step(policy.act(state, explore=False))
        if out.done:
            return list(env.trace)
        state = out.next_state


def evaluate(policy, env: SchedulingEnv, seeds) -> dict:
    """Per-seed metrics plus mean/std of each metric over seeds."""
    per_seed = {}
    for seed in seeds:
        per_seed[seed] = metrics_from_trace(run_episode(policy, env, seed))
    return {"episodes": per_seed, "aggregate": aggregate([m.row() for m in per_seed.values()])}


def aggregate(rows) -> dict:
    out = {}
    for key in AGG_METRICS:
        values = [r[key] for r in rows if r[key] is not None]
        out[key] = {
            "mean": statistics.fmean(values) if values else None,
            "std": statistics.pstdev(values) if values else None,
            "n": len(values),
        }
    return out


def _sweep_cell(args):
    name, policy, spec, env_kwargs, pr, seed, trace_dir = args
    env = SchedulingEnv(spec.replace(penetration_ratio=pr, seed=seed), **env_kwargs)
    trace = run_episode(policy, env, seed)
    if trace_dir is not None:
        from pathlib import Path

        path = Path(trace_dir) / f"{name}_pr{pr}_seed{seed}.jsonl"
        with open(path, "w") as fh:
            for rec in trace:
                fh.write(json.dumps({"policy": name, "pr": pr, "seed": seed, **rec}) + "\n")
    metrics = metrics_from_trace(trace)
    return {"policy": name, "pr": pr, "seed": seed, **metrics.row()}, asdict(metrics)


def pr_sweep(policies: dict, spec, prs, seeds, env_kwargs=None, trace_dir=None, jobs: int = 1):
    """Evaluate every policy at every (PR, seed) on identical task streams.

    ``policies`` maps a name to a fitted scheduler. Returns per-seed rows in
    (policy, pr, seed) order and the per-(policy, pr) aggregate rows.
    """
    env_kwargs = dict(env_kwargs or {})
    for pr in prs:
        if not 0 < pr <= 1:
            raise ValueError(f"penetration ratio {pr} outside (0, 1]")
    cells = [
        (name, policy, spec, env_kwargs, pr, seed, trace_dir)
        for name, policy in policies.items()
        for pr in prs
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = [r for r, _ in results]
    agg_rows = []
    for name in policies:
        for pr in prs:
            cell = [r for r in rows if r["policy"] == name and r["pr"] == pr]
            agg = aggregate(cell)
            row = {"policy": name, "pr": pr, "n_seeds": len(cell)}
            for key in AGG_METRICS:
                row[f"{key}_mean"] = agg[key]["mean"]
                row[f"{key}_std"] = agg[key]["std"]
            agg_rows.append(row)
    return rows, agg_rows


def _fmt(value):
    if value is None:
        return NA
    if isinstance(value, float):
        return repr(value)
    return value


def to_csv(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r[k]) for k in fields})
    return buf.getvalue()


def write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(rows, fields))


def read_sweep_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out = {"policy": r["policy"], "pr": float(r["pr"]), "seed": int(r["seed"])}
            for key in AGG_METRICS:
                out[key] = None if r[key] == NA else float(r[key])
            rows.append(out)
    return rows


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
