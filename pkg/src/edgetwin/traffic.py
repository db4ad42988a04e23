"""Synthetic scenario and CAV traffic generation.

Every random draw comes from a ``SeedSequence`` keyed by ``(seed, domain,
index)``, so the topology, the routes and each vehicle's payload stream do not
depend on the penetration ratio. CAVs are the first ``round(V * PR)`` entries
of a seed-fixed permutation, which makes CAV sets nested across PR values.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .syncmodel import CavSample
from .topology import AccessPoint, EdgeServer, InvalidInputError, NetworkParams, Topology, nearest_ap_in_range

_TOPOLOGY, _ROUTES, _CAVS, _VEHICLES = range(4)


class ScenarioError(InvalidInputError):
    def __init__(self, fields):
        self.fields = list(fields)
        super().__init__("invalid scenario fields: " + "; ".join(self.fields))


@dataclass
class ScenarioSpec:
    seed: int = 0
    vehicle_count: int = 1986
    penetration_ratio: float = 0.2
    episode_slots: int = 20
    slot_duration: float = 0.1  # s
    map_size: float = 1000.0  # m, square side
    routes: list | None = None  # explicit waypoint routes [[x, y], ...]
    route_count: int = 12
    waypoints_per_route: int = 4
    speed_range: tuple[float, float] = (8.0, 20.0)  # m/s
    # payload model
    status_bits: float = 8e3
    sensing_median_bits: float = 4e5
    sensing_sigma: float = 0.5  # lognormal shape
    # op model: ops = (intercept + coef * payload_bits) * U(1 - noise, 1 + noise)
    op_coefficients: tuple[float, float, float] = (100.0, 200.0, 20.0)
    op_intercepts: tuple[float, float, float] = (0.0, 0.0, 0.0)
    op_noise: float = 0.1
    tx_power_gain: float = 2e-4  # W, transmit power times channel gain
    # edge network randomization
    server_count: int = 4
    capacity_base: tuple[float, float, float] = (1.75e10, 3.5e10, 3.5e9)  # ops/s
    capacity_scale_range: tuple[float, float] = (0.4, 1.0)
    capacity_jitter: float = 0.03
    reserved_fraction_range: tuple[float, float] = (0.05, 0.15)
    hop_range: tuple[int, int] = (2, 6)  # inclusive, AP to a foreign server
    own_hops: int = 1
    ap_range: float = 250.0  # m
    network: NetworkParams = field(default_factory=NetworkParams)
    # explicit topology overrides (all optional)
    fixed_servers: list | None = None  # [{"capacity": [..], "reserved": [..]}, ...]
    fixed_aps: list | None = None  # [{"position": [x, y], "range": r}, ...] one per server
    fixed_hops: list | None = None  # E x E matrix, AP r -> server e

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkParams(**self.network)
        for name in ("speed_range", "op_coefficients", "op_intercepts", "capacity_base",
                     "capacity_scale_range", "reserved_fraction_range", "hop_range"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        bad = []

        def check(ok, msg):
            if not ok:
                bad.append(msg)

        check(isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64, "seed: must be a 64-bit unsigned integer")
        check(self.vehicle_count > 0, "vehicle_count: must be > 0")
        check(0 < self.penetration_ratio <= 1, "penetration_ratio: must lie in (0, 1]")
        check(self.episode_slots > 0, "episode_slots: must be > 0")
        check(self.slot_duration > 0, "slot_duration: must be > 0")
        check(self.map_size > 0, "map_size: must be > 0")
        check(self.route_count > 0, "route_count: must be > 0")
        check(self.waypoints_per_route >= 1, "waypoints_per_route: must be >= 1")
        lo, hi = self.speed_range
        check(0 <= lo <= hi, "speed_range: need 0 <= low <= high")
        check(self.status_bits >= 0, "status_bits: must be >= 0")
        check(self.sensing_median_bits > 0, "sensing_median_bits: must be > 0")
        check(self.sensing_sigma >= 0, "sensing_sigma: must be >= 0")
        check(len(self.op_coefficients) == 3 and min(self.op_coefficients) >= 0, "op_coefficients: three values >= 0")
        check(len(self.op_intercepts) == 3 and min(self.op_intercepts) >= 0, "op_intercepts: three values >= 0")
        check(max(self.op_coefficients + self.op_intercepts, default=0) > 0, "op_coefficients: some dimension must demand work")
        check(0 <= self.op_noise < 1, "op_noise: must lie in [0, 1)")
        check(self.tx_power_gain > 0, "tx_power_gain: must be > 0")
        check(self.server_count > 0, "server_count: must be > 0")
        check(len(self.capacity_base) == 3 and min(self.capacity_base) > 0, "capacity_base: three values > 0")
        lo, hi = self.capacity_scale_range
        check(0 < lo <= hi, "capacity_scale_range: need 0 < low <= high")
        check(0 <= self.capacity_jitter < 1, "capacity_jitter: must lie in [0, 1)")
        lo, hi = self.reserved_fraction_range
        check(0 <= lo <= hi < 1, "reserved_fraction_range: need 0 <= low <= high < 1")
        lo, hi = self.hop_range
        check(1 <= lo <= hi, "hop_range: need 1 <= low <= high")
        check(self.own_hops >= 1, "own_hops: must be >= 1")
        check(self.ap_range > 0, "ap_range: must be > 0")
        if self.fixed_servers is not None:
            check(len(self.fixed_servers) == self.server_count, "fixed_servers: need one entry per server")
        if self.fixed_aps is not None:
            check(len(self.fixed_aps) == self.server_count, "fixed_aps: need one entry per server")
        if self.fixed_hops is not None:
            rows = self.fixed_hops
            check(
                len(rows) == self.server_count and all(len(r) == self.server_count for r in rows),
                "fixed_hops: need an E x E matrix",
            )
        if self.routes is not None:
            check(len(self.routes) > 0 and all(len(r) >= 1 for r in self.routes), "routes: need non-empty waypoint lists")
        if bad:
            raise ScenarioError(bad)

    @property
    def cav_count(self) -> int:
        return int(math.floor(self.vehicle_count * self.penetration_ratio + 0.5))

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ScenarioError([f"{k}: unknown field" for k in unknown])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError([str(exc)]) from exc


@dataclass
class VehicleTrace:
    vehicle_id: int
    is_cav: bool
    positions: list  # per slot: (x, y) or None once the vehicle has left
    samples: dict = field(default_factory=dict)  # slot -> (CavSample, ap_id)

    def to_dict(self) -> dict:
        return {
            "kind": "vehicle",
            "vehicle_id": self.vehicle_id,
            "is_cav": self.is_cav,
            "positions": [None if p is None else list(p) for p in self.positions],
            "samples": [
                {"slot": slot, "ap": ap_id, **sample.to_dict()}
                for slot, (sample, ap_id) in sorted(self.samples.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleTrace":
        samples = {}
        for s in d.get("samples", []):
            samples[int(s["slot"])] = (CavSample.from_dict(s), int(s["ap"]))
        positions = [None if p is None else tuple(p) for p in d["positions"]]
        return cls(int(d["vehicle_id"]), bool(d["is_cav"]), positions, samples)


@dataclass
class Scenario:
    spec: ScenarioSpec
    topology: Topology
    traces: list[VehicleTrace]

    @property
    def n_samples(self) -> int:
        return sum(len(t.samples) for t in self.traces)

    def samples_at(self, slot: int):
        return samples_at(self.traces, slot)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "scenario", "spec": self.spec.to_dict(), "topology": self.topology.to_dict()}) + "\n")
            for t in self.traces:
                fh.write(json.dumps(t.to_dict()) + "\n")

    @classmethod
    def read(cls, path) -> "Scenario":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("kind") != "scenario":
                raise InvalidInputError(f"{path}: first record must be the scenario header")
            traces = [VehicleTrace.from_dict(json.loads(line)) for line in fh if line.strip()]
        return cls(ScenarioSpec.from_dict(header["spec"]), Topology.from_dict(header["topology"]), traces)


def _rng(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, index)))


def _build_topology(spec: ScenarioSpec) -> Topology:
    rng = _rng(spec.seed, _TOPOLOGY)
    n = spec.server_count
    servers = []
    for e in range(n):
        scale = rng.uniform(*spec.capacity_scale_range)
        jitter = rng.uniform(1 - spec.capacity_jitter, 1 + spec.capacity_jitter, size=3)
        cap = np.asarray(spec.capacity_base) * scale * jitter
        res = cap * rng.uniform(*spec.reserved_fraction_range)
        if spec.fixed_servers is not None:
            fixed = spec.fixed_servers[e]
            cap = np.asarray(fixed["capacity"], dtype=float)
            res = np.asarray(fixed.get("reserved", (0.0, 0.0, 0.0)), dtype=float)
        servers.append(EdgeServer(e, *cap.tolist(), *res.tolist()))

    positions = rng.uniform(0, spec.map_size, size=(n, 2))
    hops = rng.integers(spec.hop_range[0], spec.hop_range[1] + 1, size=(n, n))
    np.fill_diagonal(hops, spec.own_hops)
    if spec.fixed_hops is not None:
        hops = np.asarray(spec.fixed_hops, dtype=int)
    aps = []
    for r in range(n):
        pos, rng_range = positions[r], spec.ap_range
        if spec.fixed_aps is not None:
            pos = spec.fixed_aps[r]["position"]
            rng_range = spec.fixed_aps[r].get("range", spec.ap_range)
        aps.append(AccessPoint(r, r, tuple(pos), float(rng_range), {e: int(hops[r, e]) for e in range(n)}))
    return Topology(servers, aps, spec.network)


def _build_routes(spec: ScenarioSpec) -> list[np.ndarray]:
    if spec.routes is not None:
        return [np.asarray(r, dtype=float).reshape(-1, 2) for r in spec.routes]
    rng = _rng(spec.seed, _ROUTES)
    return [rng.uniform(0, spec.map_size, size=(spec.waypoints_per_route, 2)) for _ in range(spec.route_count)]


def _position_along(route: np.ndarray, cumlen: np.ndarray, s: float):
    if len(route) == 1:
        return (float(route[0, 0]), float(route[0, 1]))
    if s > cumlen[-1]:
        return None
    i = int(np.searchsorted(cumlen, s, side="right")) - 1
    i = min(i, len(route) - 2)
    seg = cumlen[i + 1] - cumlen[i]
    frac = 0.0 if seg == 0 else (s - cumlen[i]) / seg
    p = route[i] + frac * (route[i + 1] - route[i])
    return (float(p[0]), float(p[1]))


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    spec.validate()
    topology = _build_topology(spec)
    routes = _build_routes(spec)
    cumlens = [np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(r, axis=0), axis=1))]) for r in routes]

    order = _rng(spec.seed, _CAVS).permutation(spec.vehicle_count)
    cavs = set(order[: spec.cav_count].tolist())

    coef = np.asarray(spec.op_coefficients)
    intercept = np.asarray(spec.op_intercepts)
    traces = []
    for vid in range(spec.vehicle_count):
        rng = _rng(spec.seed, _VEHICLES, vid)
        route_idx = int(rng.integers(len(routes)))
        speed = rng.uniform(*spec.speed_range)
        offset = rng.uniform(0.0, cumlens[route_idx][-1])
        # payload draws happen for every slot so the stream never depends on connectivity
        sensing = spec.sensing_median_bits * np.exp(spec.sensing_sigma * rng.standard_normal(spec.episode_slots))
        noise = rng.uniform(1 - spec.op_noise, 1 + spec.op_noise, size=(spec.episode_slots, 3))

        positions, samples = [], {}
        for slot in range(spec.episode_slots):
            s = offset + speed * slot * spec.slot_duration
            pos = _position_along(routes[route_idx], cumlens[route_idx], s)
            positions.append(pos)
            if pos is None or vid not in cavs:
                continue
            ap_id = nearest_ap_in_range(pos, topology.aps)
            if ap_id is None:
                continue
            payload = spec.status_bits + sensing[slot]
            ops = (intercept + coef * payload) * noise[slot]
            samples[slot] = (
                CavSample(vid, slot, spec.status_bits, float(sensing[slot]), pos, spec.tx_power_gain, *ops.tolist()),
                ap_id,
            )
        traces.append(VehicleTrace(vid, vid in cavs, positions, samples))
    return Scenario(spec, topology, traces)


def samples_at(traces, slot: int) -> list[tuple[CavSample, int]]:
    """Connected CAV samples of one slot, ordered by vehicle id."""
    out = [t.samples[slot] for t in traces if slot in t.samples]
    out.sort(key=lambda pair: pair[0].vehicle_id)
    return out
