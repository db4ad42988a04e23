"""Run configuration: one YAML file per result, with CLI and environment overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import inspect
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .env import RewardParams
from .topology import InvalidInputError
from .traffic import ScenarioSpec

ENV_PREFIX = "EDGETWIN_"
POLICIES = ("random", "greedy", "dqn")


class ConfigError(InvalidInputError):
    pass


def _dqn_keys():
    from .agents import DQNScheduler

    return set(inspect.signature(DQNScheduler.__init__).parameters) - {"self", "n_servers"}


@dataclass
class EnvSettings:
    service_time: float = 0.05
    delay_cap: float | None = None
    contention: bool = True


@dataclass
class TrainingSettings:
    episodes: int = 200
    prs: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    seed_offset: int = 1000
    random_state: int = 0


@dataclass
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    env: EnvSettings = field(default_factory=EnvSettings)
    reward: RewardParams = field(default_factory=RewardParams)
    dqn: dict = field(default_factory=dict)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    seeds: list = field(default_factory=lambda: list(range(20)))
    prs: list = field(default_factory=lambda: [0.2, 0.8])
    policies: list = field(default_factory=lambda: list(POLICIES))
    checkpoint: str | None = None
    output_dir: str = "out"
    write_traces: bool = True
    jobs: int = 1

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.output_dir) / "checkpoint.dqn"

    def env_kwargs(self) -> dict:
        return {"reward": self.reward, **dataclasses.asdict(self.env)}

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "env": dataclasses.asdict(self.env),
            "reward": dataclasses.asdict(self.reward),
            "dqn": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.dqn.items())},
            "training": dataclasses.asdict(self.training),
            "seeds": list(self.seeds),
            "prs": list(self.prs),
            "policies": list(self.policies),
            "checkpoint": self.checkpoint,
            "output_dir": self.output_dir,
            "write_traces": self.write_traces,
            "jobs": self.jobs,
        }

    def validate(self):
        bad = []
        if not self.seeds:
            bad.append("seeds: must be non-empty")
        if not self.prs or not all(0 < p <= 1 for p in self.prs):
            bad.append("prs: need values in (0, 1]")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown or not self.policies:
            bad.append(f"policies: choose from {', '.join(POLICIES)}")
        if self.training.episodes < 0:
            bad.append("training.episodes: must be >= 0")
        if not self.training.prs or not all(0 < p <= 1 for p in self.training.prs):
            bad.append("training.prs: need values in (0, 1]")
        if not self.env.service_time > 0:
            bad.append("env.service_time: must be > 0")
        if self.jobs < 1:
            bad.append("jobs: must be >= 1")
        extra = set(self.dqn) - _dqn_keys()
        if extra:
            bad.append(f"dqn: unknown keys {sorted(extra)}")
        if bad:
            raise ConfigError("invalid run config: " + "; ".join(bad))
        return self


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_scenario_spec(source, base_dir=None) -> ScenarioSpec:
    """A scenario spec from a mapping, a spec YAML path, or a run config holding one."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        data = load_yaml(path)
        if "scenario" in data:
            return load_scenario_spec(data["scenario"], path.parent)
        source = data
    return ScenarioSpec.from_dict(source)


def load_run_config(path) -> RunConfig:
    data = load_yaml(path)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = dict(data)
    if "scenario" in data:
        kwargs["scenario"] = load_scenario_spec(data["scenario"], Path(path).parent)
    kwargs["env"] = _section(EnvSettings, data.get("env"), "env")
    kwargs["reward"] = _section(RewardParams, data.get("reward"), "reward")
    kwargs["training"] = _section(TrainingSettings, data.get("training"), "training")
    kwargs["dqn"] = dict(data.get("dqn") or {})
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def apply_overrides(cfg: RunConfig, *, out=None, seed=None, policy=None, episodes=None, pr=None, environ=None) -> RunConfig:
    """Command-line values win over ``EDGETWIN_*`` environment variables."""
    environ = os.environ if environ is None else environ

    def pick(value, name):
        return value if value is not None else environ.get(ENV_PREFIX + name)

    try:
        if (v := pick(out, "OUT")) is not None:
            cfg.output_dir = str(v)
        if (v := pick(seed, "SEED")) is not None:
            cfg.seeds = _ints(v)
        if (v := pick(policy, "POLICY")) is not None:
            cfg.policies = [p.strip() for p in str(v).split(",") if p.strip()]
        if (v := pick(episodes, "EPISODES")) is not None:
            cfg.training.episodes = int(v)
        if (v := pick(pr, "PR")) is not None:
            cfg.prs = _floats(v)
    except ValueError as exc:
        raise ConfigError(f"bad override: {exc}") from exc
    return cfg.validate()


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
