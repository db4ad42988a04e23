from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from edgetwin.syncmodel import CavSample
from edgetwin.topology import AccessPoint, EdgeServer, NetworkParams, Topology
from edgetwin.traffic import ScenarioSpec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


def make_server(sid=0, cap=(1e10, 2e10, 2e9), reserved=(0.0, 0.0, 0.0)):
    return EdgeServer(sid, *cap, *reserved)


def make_ap(aid=0, position=(0.0, 0.0), hops=None, rng=250.0):
    return AccessPoint(aid, aid, position, rng, hops or {0: 1})


def make_sample(vid=0, slot=0, status=8e3, sensing=4e5, position=(50.0, 0.0), gain=2e-4, ops=(1e7, 2e7, 1e6)):
    return CavSample(vid, slot, status, sensing, position, gain, *ops)


def two_server_topology(cap0=(1e10, 2e10, 2e9), cap1=(1e8, 1e8, 1e7)):
    servers = [make_server(0, cap0), make_server(1, cap1)]
    aps = [make_ap(0, (0.0, 0.0), {0: 1, 1: 2}), make_ap(1, (300.0, 0.0), {0: 2, 1: 1})]
    return Topology(servers, aps, NetworkParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return ScenarioSpec(seed=3, vehicle_count=60, penetration_ratio=0.5, episode_slots=6)
