"""Task-provisioning MDP over a generated scenario.

Each decision step places the head task of the queue on one server. When the
queue drains, the clock moves to the next slot with connected CAVs, finished
assignments are released, and the queue is refilled in vehicle-id order. An
episode has exactly one decision per CAV sample.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .syncmodel import SyncBreakdown, sync_latency, wired_delay, wireless_delay
from .tasking import DtTask, EventLog, ResourceManager, TaskQueue, form_task, task_demand
from .topology import InvalidInputError, mean_utilization, utilization_rate
from .traffic import Scenario, ScenarioSpec, generate_scenario


class EmptyEpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardParams:
    delta_pos: float = 1.0
    delta_neg: float = -10.0
    epsilon_weight: float = 1.0
    zeta_weight: float = 50.0  # per second of sync latency

    def __post_init__(self):
        bad = []
        if not self.delta_pos > 0:
            bad.append("delta_pos must be > 0")
        if not self.delta_neg < 0:
            bad.append("delta_neg must be < 0")
        if not self.epsilon_weight >= 0:
            bad.append("epsilon_weight must be >= 0")
        if not self.zeta_weight >= 0:
            bad.append("zeta_weight must be >= 0")
        if bad:
            raise InvalidInputError("invalid reward parameters: " + "; ".join(bad))

    def reward(self, admitted: bool, utilization: float, latency: float) -> float:
        delta = self.delta_pos if admitted else self.delta_neg
        return delta + self.epsilon_weight * utilization - self.zeta_weight * latency


@dataclass
class MdpState:
    trans_delay: np.ndarray  # (E,) wireless + wired seconds to each server
    capacities: np.ndarray  # (E, 3) ops/s
    utilized: np.ndarray  # (E, 3) ops/s, reserved included
    task_req: np.ndarray  # (3,) ops

    @property
    def n_servers(self) -> int:
        return len(self.trans_delay)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.trans_delay, self.capacities.ravel(), self.utilized.ravel(), self.task_req])

    @classmethod
    def from_vector(cls, x, n_servers: int) -> "MdpState":
        x = np.asarray(x, dtype=float)
        e = n_servers
        if x.shape != (7 * e + 3,):
            raise InvalidInputError(f"observation length {x.shape} does not match {7 * e + 3}")
        return cls(x[:e], x[e : 4 * e].reshape(e, 3), x[4 * e : 7 * e].reshape(e, 3), x[7 * e :])


@dataclass
class StepOutcome:
    next_state: MdpState | None
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def episode_reward(rewards) -> float:
    rewards = list(rewards)
    if not rewards:
        raise InvalidInputError("episode reward needs at least one step")
    return math.fsum(rewards) / len(rewards)


def observation_bounds(spec: ScenarioSpec, topology=None) -> dict:
    """Normalizing bounds for observations generated under ``spec``."""
    if spec.fixed_servers is not None and topology is not None:
        cap_max = np.max([s.capacity for s in topology.servers], axis=0)
    else:
        cap_max = np.asarray(spec.capacity_base) * spec.capacity_scale_range[1] * (1 + spec.capacity_jitter)
    payload_hi = spec.status_bits + spec.sensing_median_bits * math.exp(3 * spec.sensing_sigma)
    ops_max = (np.asarray(spec.op_intercepts) + np.asarray(spec.op_coefficients) * payload_hi) * (1 + spec.op_noise)
    ops_max = np.where(ops_max > 0, ops_max, 1.0)
    return {"capacity_max": cap_max.tolist(), "ops_max": ops_max.tolist()}


class SchedulingEnv:
    """Gym-like environment: ``reset(seed) -> MdpState``, ``step(action) -> StepOutcome``.

    ``scenario`` may be a :class:`ScenarioSpec`, regenerated with the seed
    passed to :meth:`reset`, or a fixed :class:`Scenario`. With
    ``contention=True`` a task runs at the capacity left over on its server at
    admission (never less than its own held demand); with ``contention=False``
    it runs at the server's full capability.
    """

    def __init__(
        self,
        scenario,
        reward: RewardParams | None = None,
        service_time: float = 0.05,
        delay_cap: float | None = None,
        contention: bool = True,
        record: bool = False,
        record_states: bool = False,
    ):
        if isinstance(scenario, Scenario):
            self.spec, self._scenario = scenario.spec, scenario
        elif isinstance(scenario, ScenarioSpec):
            self.spec, self._scenario = scenario, None
        else:
            raise InvalidInputError("scenario must be a ScenarioSpec or Scenario")
        self._fixed = self._scenario is not None
        self.reward_params = reward or RewardParams()
        if not service_time > 0:
            raise InvalidInputError("service_time must be positive")
        self.service_time = service_time
        self.delay_cap = delay_cap if delay_cap is not None else 10 * self.spec.network.sync_threshold
        self.contention = contention
        self.record = record
        self.record_states = record_states
        self.n_servers = self.spec.server_count
        self.observation_size = 7 * self.n_servers + 3
        self.scenario = None
        self.state = None

    # -- episode lifecycle -------------------------------------------------
    def reset(self, seed: int | None = None) -> MdpState:
        if self._fixed:
            self.scenario = self._scenario
        else:
            spec = self.spec if seed is None else self.spec.replace(seed=int(seed))
            if self.scenario is None or self.scenario.spec != spec:
                self.scenario = generate_scenario(spec)
        self.topology = self.scenario.topology
        self.params = self.topology.params
        self.events = EventLog()
        self.resources = ResourceManager(self.topology.servers, self.service_time, self.events)
        self.horizon = self.scenario.n_samples
        if self.horizon == 0:
            raise EmptyEpisodeError(f"scenario seed {self.scenario.spec.seed} has no connected CAV samples")
        self.queue = TaskQueue()
        self.samples = {}
        self.slot = -1
        self.clock = 0.0
        self.steps = 0
        self.rewards = []
        self.trace = []
        self._advance_slot()
        self.state = self._observe()
        return self.state

    def _advance_slot(self):
        while not len(self.queue):
            self.slot += 1
            if self.slot >= self.spec.episode_slots:
                return
            self.clock = self.slot * self.spec.slot_duration
            self.resources.release_due(self.clock)
            for sample, ap_id in self.scenario.samples_at(self.slot):
                task = form_task(sample, self.topology.ap(ap_id))
                self.samples[task.task_id] = sample
                self.queue.push(sample.vehicle_id, task)

    def _observe(self) -> MdpState:
        _, task = self.queue.head
        sample = self.samples[task.task_id]
        ap = self.topology.ap(task.src[1])
        wireless = wireless_delay(sample, ap, self.params)
        trans = np.array(
            [wireless + wired_delay(task.payload, ap.hops_to[e], self.params) for e in range(self.n_servers)]
        )
        servers = self.topology.servers
        return MdpState(
            trans,
            np.array([s.capacity for s in servers]),
            np.array([s.used for s in servers]),
            task.ops,
        )

    def processing_rates(self, task: DtTask, server_id: int):
        if not self.contention:
            return None
        server = self.topology.servers[server_id]
        demand = task_demand(task, self.service_time)
        return tuple(max(r, d) for r, d in zip(server.residual, demand))

    def step(self, action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)) or not 0 <= action < self.n_servers:
            raise InvalidInputError(f"action must be a server index in [0, {self.n_servers}), got {action!r}")
        action = int(action)
        state = self.state
        vehicle_id, task = self.queue.pop()
        sample = self.samples[task.task_id]
        ap = self.topology.ap(task.src[1])
        server = self.topology.servers[action]

        breakdown = sync_latency(sample, ap, server, self.params, self.processing_rates(task, action))
        admitted = self.resources.admissible(task, action)
        if admitted:
            self.resources.admit(task, action, self.clock, breakdown.processing_delay)
        else:
            self.resources.drop(task, action, self.clock)
        ur = mean_utilization(self.topology.servers)
        reward = self.reward_params.reward(admitted, ur, breakdown.total)
        self.rewards.append(reward)

        info = {
            "step": self.steps,
            "slot": self.slot,
            "vehicle": vehicle_id,
            "task": task.task_id,
            "server": action,
            "admitted": admitted,
            "sync": breakdown,
            "utilization": ur,
            "server_utilization": [sum(utilization_rate(s)) / 3 for s in self.topology.servers],
        }
        if self.record:
            self.trace.append(self._trace_record(state, info, reward))
        self.steps += 1

        done = self.steps >= self.horizon
        if not done:
            self._advance_slot()
            if not len(self.queue):
                raise RuntimeError("queue exhausted before the episode horizon")
            self.state = self._observe()
        else:
            self.state = None
        return StepOutcome(self.state, reward, done, info)

    def _trace_record(self, state: MdpState, info: dict, reward: float) -> dict:
        b: SyncBreakdown = info["sync"]
        rec = {
            "step": info["step"],
            "slot": info["slot"],
            "vehicle": info["vehicle"],
            "task": info["task"],
            "action": info["server"],
            "admitted": info["admitted"],
            "reward": reward,
            "wireless": b.wireless_delay,
            "wired": b.wired_delay,
            "processing": b.processing_delay,
            "total": b.total,
            "within": b.within_threshold,
            "utilization": info["utilization"],
            "server_utilization": info["server_utilization"],
        }
        if self.record_states:
            rec["state"] = state.vector().tolist()
        return rec

    def bounds(self) -> dict:
        if self.scenario is None:
            self.reset()
        return observation_bounds(self.spec, self.scenario.topology)

    def write_trace(self, path, extra: dict | None = None):
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps({**(extra or {}), **rec}) + "\n")
