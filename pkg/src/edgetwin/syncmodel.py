"""Digital-twin synchronization latency: wireless upload, wired hops, processing."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .topology import AccessPoint, EdgeServer, InvalidInputError, NetworkParams


@dataclass(frozen=True)
class CavSample:
    """One vehicle's status+sensing upload for a single time slot.

    ``tx_power_gain`` is the product of transmit power and channel gain, the
    only form in which either enters the rate formula.
    """

    vehicle_id: int
    time_slot: int
    status_bits: float
    sensing_bits: float
    position: tuple[float, float]
    tx_power_gain: float
    cpu_ops: float
    gpu_ops: float
    store_ops: float

    def __post_init__(self):
        bad = [
            name
            for name in ("status_bits", "sensing_bits", "cpu_ops", "gpu_ops", "store_ops")
            if not getattr(self, name) >= 0
        ]
        if not self.tx_power_gain > 0:
            bad.append("tx_power_gain")
        if not (self.cpu_ops > 0 or self.gpu_ops > 0 or self.store_ops > 0):
            bad.append("ops (at least one must be positive)")
        if bad:
            raise InvalidInputError(f"invalid CAV sample fields: {', '.join(bad)}")

    @property
    def ops(self) -> tuple[float, float, float]:
        return (self.cpu_ops, self.gpu_ops, self.store_ops)

    def to_dict(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "time_slot": self.time_slot,
            "status_bits": self.status_bits,
            "sensing_bits": self.sensing_bits,
            "position": list(self.position),
            "tx_power_gain": self.tx_power_gain,
            "ops": list(self.ops),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CavSample":
        return cls(
            int(d["vehicle_id"]),
            int(d["time_slot"]),
            float(d["status_bits"]),
            float(d["sensing_bits"]),
            tuple(d["position"]),
            float(d["tx_power_gain"]),
            *map(float, d["ops"]),
        )


@dataclass(frozen=True)
class SyncBreakdown:
    wireless_delay: float
    wired_delay: float
    processing_delay: float
    total: float
    within_threshold: bool


def payload_size(sample: CavSample) -> float:
    return sample.status_bits + sample.sensing_bits


def uplink_rate(sample: CavSample, ap: AccessPoint, params: NetworkParams) -> float:
    """Shannon rate over a path-loss channel; distance is clamped at ``params.min_distance``."""
    distance = max(ap.distance_to(sample.position), params.min_distance)
    snr = sample.tx_power_gain * distance ** (-params.path_loss_exponent) / params.noise_power
    return params.bandwidth * math.log2(1.0 + snr)


def wireless_delay(sample: CavSample, ap: AccessPoint, params: NetworkParams) -> float:
    payload = payload_size(sample)
    if payload == 0:
        return 0.0
    return payload / uplink_rate(sample, ap, params)


def wired_delay(payload: float, hops: int, params: NetworkParams) -> float:
    if hops < 1:
        raise InvalidInputError(f"hop count must be >= 1, got {hops}")
    return params.per_hop_delay * hops * payload


def processing_delay(sample: CavSample, server: EdgeServer, rates=None) -> float:
    """Longest of the three concurrently executed operation groups.

    By default each group runs at the server's full capability. ``rates``
    substitutes per-dimension execution rates (ops/s), e.g. the capacity left
    over by tasks already running on the server. A dimension with zero ops
    contributes nothing regardless of its rate.
    """
    if rates is None:
        rates = (server.cpu_capacity, server.gpu_capacity, server.store_capacity)
    return max(ops / rate if ops > 0 else 0.0 for ops, rate in zip(sample.ops, rates))


def sync_latency(
    sample: CavSample,
    ap: AccessPoint,
    server: EdgeServer,
    params: NetworkParams,
    rates=None,
) -> SyncBreakdown:
    wireless = wireless_delay(sample, ap, params)
    wired = wired_delay(payload_size(sample), ap.hops_to[server.id], params)
    processing = float(processing_delay(sample, server, rates))
    total = wireless + wired + processing
    return SyncBreakdown(wireless, wired, processing, total, bool(total <= params.sync_threshold))
