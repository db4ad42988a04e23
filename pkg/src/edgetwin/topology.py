"""Static edge-network model: servers, access points and utilization arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIMENSIONS = ("cpu", "gpu", "store")


class InvalidInputError(ValueError):
    pass


@dataclass
class EdgeServer:
    """An edge server with CPU/GPU/storage execution capability in ops per second.

    ``used`` counters always include the reserved share, so a freshly reset
    server has ``used == reserved``.
    """

    id: int
    cpu_capacity: float
    gpu_capacity: float
    store_capacity: float
    cpu_reserved: float = 0.0
    gpu_reserved: float = 0.0
    store_reserved: float = 0.0
    cpu_used: float = field(default=None)
    gpu_used: float = field(default=None)
    store_used: float = field(default=None)

    def __post_init__(self):
        cap = self.capacity
        res = self.reserved
        if not np.all(cap > 0) or not np.all(np.isfinite(cap)):
            raise InvalidInputError(f"server {self.id}: capacities must be positive, got {cap}")
        if np.any(res < 0) or np.any(res > cap):
            raise InvalidInputError(f"server {self.id}: reserved must lie in [0, capacity], got {res}")
        for dim in DIMENSIONS:
            if getattr(self, f"{dim}_used") is None:
                setattr(self, f"{dim}_used", float(getattr(self, f"{dim}_reserved")))

    @property
    def capacity(self) -> np.ndarray:
        return np.array([self.cpu_capacity, self.gpu_capacity, self.store_capacity], dtype=float)

    @property
    def reserved(self) -> np.ndarray:
        return np.array([self.cpu_reserved, self.gpu_reserved, self.store_reserved], dtype=float)

    @property
    def used(self) -> np.ndarray:
        return np.array([self.cpu_used, self.gpu_used, self.store_used], dtype=float)

    @used.setter
    def used(self, value):
        self.cpu_used, self.gpu_used, self.store_used = (float(v) for v in value)

    @property
    def residual(self) -> np.ndarray:
        return self.capacity - self.used

    def reset(self):
        self.used = self.reserved

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "capacity": self.capacity.tolist(),
            "reserved": self.reserved.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeServer":
        cap, res = d["capacity"], d.get("reserved", (0.0, 0.0, 0.0))
        return cls(int(d["id"]), *map(float, cap), *map(float, res))


@dataclass
class AccessPoint:
    """Wireless ingress wired to every server over ``hops_to[server_id]`` hops."""

    id: int
    owner: int
    position: tuple[float, float]
    range: float
    hops_to: dict[int, int]

    def __post_init__(self):
        self.position = (float(self.position[0]), float(self.position[1]))
        self.hops_to = {int(k): int(v) for k, v in self.hops_to.items()}
        if not self.range > 0:
            raise InvalidInputError(f"AP {self.id}: range must be positive")
        if any(h < 1 for h in self.hops_to.values()):
            raise InvalidInputError(f"AP {self.id}: hop counts must be >= 1")

    def distance_to(self, position) -> float:
        return math.hypot(position[0] - self.position[0], position[1] - self.position[1])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "owner": self.owner,
            "position": list(self.position),
            "range": self.range,
            "hops_to": {str(k): v for k, v in sorted(self.hops_to.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccessPoint":
        return cls(int(d["id"]), int(d["owner"]), tuple(d["position"]), float(d["range"]), d["hops_to"])


@dataclass(frozen=True)
class NetworkParams:
    bandwidth: float = 10e6  # Hz
    noise_power: float = 1e-13  # W
    path_loss_exponent: float = 3.0
    per_hop_delay: float = 1.1e-8  # s per bit per hop
    sync_threshold: float = 0.025  # s
    min_distance: float = 1.0  # m, clamp for the path-loss singularity

    def __post_init__(self):
        bad = []
        if not self.bandwidth > 0:
            bad.append("bandwidth")
        if not self.noise_power > 0:
            bad.append("noise_power")
        if not self.path_loss_exponent > 0:
            bad.append("path_loss_exponent")
        if not self.per_hop_delay >= 0:
            bad.append("per_hop_delay")
        if not self.sync_threshold > 0:
            bad.append("sync_threshold")
        if not self.min_distance > 0:
            bad.append("min_distance")
        if bad:
            raise InvalidInputError(f"invalid network parameters: {', '.join(bad)}")


@dataclass
class Topology:
    servers: list[EdgeServer]
    aps: list[AccessPoint]
    params: NetworkParams = field(default_factory=NetworkParams)

    def __post_init__(self):
        if not self.servers:
            raise InvalidInputError("topology needs at least one server")
        ids = {s.id for s in self.servers}
        if ids != set(range(len(self.servers))):
            raise InvalidInputError("server ids must be 0..E-1")
        for ap in self.aps:
            if set(ap.hops_to) != ids:
                raise InvalidInputError(f"AP {ap.id}: hops_to must cover every server")

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    def ap(self, ap_id: int) -> AccessPoint:
        return self.aps[ap_id]

    def reset(self):
        for s in self.servers:
            s.reset()

    def to_dict(self) -> dict:
        return {
            "servers": [s.to_dict() for s in self.servers],
            "aps": [a.to_dict() for a in self.aps],
            "params": dict(self.params.__dict__),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(
            [EdgeServer.from_dict(s) for s in d["servers"]],
            [AccessPoint.from_dict(a) for a in d["aps"]],
            NetworkParams(**d.get("params", {})),
        )


def utilization_rate(server: EdgeServer) -> tuple[float, float, float]:
    """Per-dimension used/capacity; ``used`` already includes the reserved share."""
    return (
        server.cpu_used / server.cpu_capacity,
        server.gpu_used / server.gpu_capacity,
        server.store_used / server.store_capacity,
    )


def mean_utilization(servers) -> float:
    """Grand mean of the 3|E| per-dimension utilization rates."""
    servers = list(servers)
    if not servers:
        raise InvalidInputError("mean_utilization needs at least one server")
    total = 0.0
    for s in servers:
        cpu, gpu, store = utilization_rate(s)
        total += gpu + cpu + store
    return total / (3 * len(servers))


def nearest_ap_in_range(position, aps) -> int | None:
    best_id, best_dist = None, math.inf
    for ap in aps:
        d = ap.distance_to(position)
        if d > ap.range:
            continue
        if d < best_dist or (d == best_dist and ap.id < best_id):
            best_id, best_dist = ap.id, d
    return best_id
