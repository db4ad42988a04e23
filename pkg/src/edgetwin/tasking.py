"""DT task formation, the pending queue, and admission bookkeeping.

A task occupies rate-demand ``ops / service_time`` on each dimension of its
server from admission until ``admission_time + processing_delay``. Server
``used`` counters are recomputed as a correctly rounded sum of the reserved
share and all live demands, so releasing every task restores the reserved
level exactly.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .syncmodel import CavSample, payload_size
from .topology import AccessPoint, EdgeServer, InvalidInputError


class AdmissionError(RuntimeError):
    """Raised when a task is admitted to a server it does not fit on."""


@dataclass
class DtTask:
    cpu_ops: float
    gpu_ops: float
    store_ops: float
    payload: float
    src: tuple[int, int]  # (vehicle_id, ap_id)
    time_slot: int = 0
    dst: int | None = None

    @property
    def ops(self) -> np.ndarray:
        return np.array([self.cpu_ops, self.gpu_ops, self.store_ops], dtype=float)

    @property
    def task_id(self) -> str:
        return f"{self.time_slot}:{self.src[0]}"

    def assign(self, server_id: int):
        if self.dst is not None:
            raise AdmissionError(f"task {self.task_id} already assigned to server {self.dst}")
        self.dst = server_id


class TaskQueue:
    """FIFO of pending ``(vehicle_id, DtTask)`` pairs; the head is decided next."""

    def __init__(self, items=()):
        self._items = deque(items)

    def push(self, vehicle_id: int, task: DtTask):
        self._items.append((vehicle_id, task))

    def extend(self, pairs):
        self._items.extend(pairs)

    @property
    def head(self) -> tuple[int, DtTask]:
        return self._items[0]

    def pop(self) -> tuple[int, DtTask]:
        return self._items.popleft()

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


@dataclass
class Assignment:
    task: DtTask
    server: int
    demand: tuple[float, float, float]
    admit_time: float
    release_time: float


def form_task(sample: CavSample, ap: AccessPoint) -> DtTask:
    payload = payload_size(sample)
    if payload <= 0:
        raise InvalidInputError(f"vehicle {sample.vehicle_id}: zero-payload sample cannot form a task")
    return DtTask(
        sample.cpu_ops,
        sample.gpu_ops,
        sample.store_ops,
        payload,
        (sample.vehicle_id, ap.id),
        sample.time_slot,
    )


def task_demand(task: DtTask, service_time: float) -> tuple[float, float, float]:
    return (task.cpu_ops / service_time, task.gpu_ops / service_time, task.store_ops / service_time)


def _summed_usage(server: EdgeServer, demands) -> list[float]:
    reserved = server.reserved
    return [math.fsum([reserved[d], *(dem[d] for dem in demands)]) for d in range(3)]


def admissible(task: DtTask, server: EdgeServer, service_time: float, live=()) -> bool:
    """True iff reserved + live demands + this task's demand fits every capacity.

    ``live`` holds the demands already placed on ``server``; it defaults to
    none, in which case the server's current ``used`` counters are trusted.
    """
    demand = task_demand(task, service_time)
    if live:
        parts = [[server.reserved[d], *(dem[d] for dem in live), demand[d]] for d in range(3)]
    else:
        parts = [[server.used[d], demand[d]] for d in range(3)]
    for terms, cap in zip(parts, server.capacity):
        total = math.fsum(terms)
        if total > cap:
            return False
        # a rounded sum can land on the capacity while the exact sum exceeds it
        if total == cap and sum(map(Fraction, terms)) > Fraction(cap):
            return False
    return True


class EventLog:
    """Line-delimited admit/release/drop records."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, event: str, time: float, server: int, task: DtTask, demand):
        self.records.append(
            {
                "event": event,
                "time": time,
                "server": server,
                "task": task.task_id,
                "demand": [float(x) for x in demand],
            }
        )

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    def __len__(self):
        return len(self.records)


class ResourceManager:
    """Owns the live assignments of a set of servers and keeps ``used`` coherent."""

    def __init__(self, servers: list[EdgeServer], service_time: float, log: EventLog | None = None):
        if not service_time > 0:
            raise InvalidInputError("service_time must be positive")
        self.servers = servers
        self.service_time = service_time
        self.log = log if log is not None else EventLog()
        self.live: list[list[Assignment]] = [[] for _ in servers]
        for s in servers:
            s.reset()

    def _refresh(self, server_id: int):
        server = self.servers[server_id]
        server.used = _summed_usage(server, [a.demand for a in self.live[server_id]])

    def admissible(self, task: DtTask, server_id: int) -> bool:
        live = [a.demand for a in self.live[server_id]]
        return admissible(task, self.servers[server_id], self.service_time, live or ())

    def admit(self, task: DtTask, server_id: int, now: float, hold_time: float) -> Assignment:
        if not self.admissible(task, server_id):
            raise AdmissionError(f"task {task.task_id} does not fit on server {server_id}")
        if not hold_time > 0:
            raise InvalidInputError("hold_time must be positive")
        task.assign(server_id)
        demand = task_demand(task, self.service_time)
        assignment = Assignment(task, server_id, demand, now, now + hold_time)
        self.live[server_id].append(assignment)
        self._refresh(server_id)
        self.log.add("admit", now, server_id, task, demand)
        return assignment

    def drop(self, task: DtTask, server_id: int, now: float):
        self.log.add("drop", now, server_id, task, task_demand(task, self.service_time))

    def release_due(self, now: float) -> int:
        released = 0
        for server_id, live in enumerate(self.live):
            due = [a for a in live if a.release_time <= now]
            if not due:
                continue
            self.live[server_id] = [a for a in live if a.release_time > now]
            for a in due:
                self.log.add("release", now, server_id, a.task, a.demand)
            self._refresh(server_id)
            released += len(due)
        return released

    @property
    def n_live(self) -> int:
        return sum(len(v) for v in self.live)
