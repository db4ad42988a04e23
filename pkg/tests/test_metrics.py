import math

import pytest

from edgetwin import metrics
from edgetwin.agents import GreedyScheduler, RandomScheduler
from edgetwin.env import SchedulingEnv
from edgetwin.traffic import ScenarioSpec


class Always:
    def __init__(self, server):
        self.server = server

    def act(self, state, explore=False):
        return self.server


def toy_spec(cap1=(1e8, 1e8, 1e7)):
    return ScenarioSpec(
        vehicle_count=4, penetration_ratio=1.0, episode_slots=5, server_count=2,
        routes=[[[100, 100]], [[110, 100]], [[100, 110]], [[110, 110]]], speed_range=(0, 0),
        sensing_sigma=0.0, op_noise=0.0,
        fixed_servers=[{"capacity": [1e10, 2e10, 2e9]}, {"capacity": list(cap1)}],
        fixed_aps=[{"position": [100, 100]}, {"position": [120, 120]}], fixed_hops=[[1, 1], [1, 1]],
    )


def test_saturated_policy_has_undefined_sync_error():
    m = metrics.metrics_from_trace(metrics.run_episode(Always(1), SchedulingEnv(toy_spec()), 0))
    assert m.sched_success_rate == 0.0
    assert m.sync_error_rate is None
    assert m.tasks == m.drops == 20
    assert metrics.to_csv([{"policy": "x", "pr": 1.0, "seed": 0, **m.row()}], metrics.SWEEP_FIELDS).splitlines()[1].split(",")[3] == "NA"


def test_single_admissible_task_within_threshold():
    spec = toy_spec().replace(vehicle_count=1, routes=[[[100, 100]]], episode_slots=1)
    m = metrics.metrics_from_trace(metrics.run_episode(Always(0), SchedulingEnv(spec), 0))
    assert (m.sync_error_rate, m.sched_success_rate, m.tasks) == (0.0, 1.0, 1)


def brute_force(trace):
    admitted = [r for r in trace if r["admitted"]]
    late = [r for r in admitted if r["wireless"] + r["wired"] + r["processing"] > 0.025]
    return {
        "sync_error": len(late) / len(admitted) if admitted else None,
        "sched_success": len(admitted) / len(trace),
        "max_util": max(u for r in trace for u in r["server_utilization"]),
        "mean_util": math.fsum(r["utilization"] for r in trace) / len(trace),
        "mean_reward": math.fsum(r["reward"] for r in trace) / len(trace),
    }


def test_random_policy_metrics_match_trace(tmp_path):
    spec = ScenarioSpec(vehicle_count=120, episode_slots=6, penetration_ratio=0.6)
    rows, _ = metrics.pr_sweep({"random": RandomScheduler(4, random_state=0)}, spec, [0.6], [0, 1], trace_dir=tmp_path)
    for row in rows:
        trace = metrics.read_trace(tmp_path / f"random_pr0.6_seed{row['seed']}.jsonl")
        want = brute_force(trace)
        for key in metrics.AGG_METRICS:
            assert row[key] == want[key]
        assert 0 <= row["sched_success"] <= 1 and 0 <= row["max_util"] <= 1


def test_single_pr_table_and_pairing(tmp_path):
    spec = ScenarioSpec(vehicle_count=80, episode_slots=4, penetration_ratio=0.5)
    policies = {"random": RandomScheduler(4, random_state=0), "greedy": GreedyScheduler(4)}
    rows, agg = metrics.pr_sweep(policies, spec, [0.5], [3], trace_dir=tmp_path)
    assert [(r["policy"], r["pr"]) for r in agg] == [("random", 0.5), ("greedy", 0.5)]
    tasks = [[r["task"] for r in metrics.read_trace(tmp_path / f"{p}_pr0.5_seed3.jsonl")] for p in policies]
    assert tasks[0] == tasks[1]


def test_aggregate_skips_undefined():
    rows = [{k: 1.0 for k in metrics.AGG_METRICS}, {**{k: 0.0 for k in metrics.AGG_METRICS}, "sync_error": None}]
    agg = metrics.aggregate(rows)
    assert agg["sync_error"] == {"mean": 1.0, "std": 0.0, "n": 1}
    assert agg["sched_success"]["mean"] == 0.5


def test_csv_round_trip(tmp_path):
    row = {"policy": "greedy", "pr": 0.2, "seed": 4, "sync_error": 0.1 + 0.2, "sched_success": 1 / 3,
           "max_util": 0.95, "mean_util": 2 / 7, "mean_reward": -1e-17}
    metrics.write_csv(tmp_path / "s.csv", [row], metrics.SWEEP_FIELDS)
    assert metrics.read_sweep_csv(tmp_path / "s.csv") == [row]


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        metrics.metrics_from_trace([])


def test_bad_pr_rejected():
    with pytest.raises(ValueError):
        metrics.pr_sweep({}, ScenarioSpec(), [0.0], [0])
