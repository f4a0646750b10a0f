"""Scenario configuration, read from YAML."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .churn import ChurnParams
from .network import DelaySpec

ENGINES = ("analytic", "protocol")
STRATEGIES = ("honest", "withholding", "double_spend", "byzantine")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChurnSpec:
    p: float = 0.0
    q: float = 1.0

    def params(self, rate_unit: float, tick: float) -> ChurnParams:
        return ChurnParams.from_rates(self.p, self.q, rate_unit, tick)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: int = 10_000
    engine: str = "analytic"
    tick_seconds: float = 1.0
    # churn probabilities are quoted per ``rate_unit_seconds``
    rate_unit_seconds: float = 1.0
    n_resources: int = 1000
    attacker_resource_fraction: float = 0.25
    initial_chain_length: int = 100
    initial_online_voters: int = 50
    initial_attacker_block_fraction: Optional[float] = None
    resource_churn: ChurnSpec = field(default_factory=ChurnSpec)
    peer_churn: ChurnSpec = field(default_factory=ChurnSpec)
    tau: float = 600.0
    reward: int = 50
    delay: DelaySpec = field(default_factory=DelaySpec)
    strategy: str = "honest"
    # False: the attacker's block identity is registered but never run as a voter
    fresh_attacker_identities: bool = True
    attacker_peers_never_fail: bool = False
    sample_every: int = 1
    min_difficulty: int = 1
    genesis_digest: Optional[str] = None
    # protocol engine only
    ping_interval: int = 10
    suspicion_threshold: int = 30
    base_timeout: int = 30
    tx_every: int = 0
    initial_balance: int = 100

    def __post_init__(self):
        self.validate()

    @property
    def attacker_resource_ratio(self) -> float:
        t = self.attacker_resource_fraction
        return float("inf") if t >= 1 else t / (1 - t)

    @property
    def attacker_block_fraction(self) -> float:
        f = self.initial_attacker_block_fraction
        return self.attacker_resource_fraction if f is None else f

    def resource_params(self) -> ChurnParams:
        return self.resource_churn.params(self.rate_unit_seconds, self.tick_seconds)

    def peer_params(self) -> ChurnParams:
        return self.peer_churn.params(self.rate_unit_seconds, self.tick_seconds)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.seed, int), "seed must be an integer")
        need(self.duration >= 0, "duration must be nonnegative")
        need(self.engine in ENGINES, f"engine must be one of {ENGINES}")
        need(self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}")
        need(self.tick_seconds > 0 and self.rate_unit_seconds > 0, "tick and rate unit must be positive")
        need(self.n_resources >= 1, "need at least one resource")
        need(0.0 <= self.attacker_resource_fraction <= 1.0, "attacker_resource_fraction must be in [0, 1]")
        need(self.initial_chain_length >= 1, "initial chain must hold at least one block")
        need(1 <= self.initial_online_voters <= self.initial_chain_length,
             "initial_online_voters must be between 1 and the initial chain length")
        need(0.0 <= self.attacker_block_fraction <= 1.0, "initial_attacker_block_fraction must be in [0, 1]")
        for name in ("resource_churn", "peer_churn"):
            c = getattr(self, name)
            need(0.0 <= c.p <= 1.0 and 0.0 <= c.q <= 1.0, f"{name} probabilities must be in [0, 1]")
        need(self.tau > 0, "tau must be positive")
        need(self.reward >= 0, "reward must be nonnegative")
        need(self.sample_every >= 1, "sample_every must be at least 1")
        need(1 <= self.min_difficulty <= 24, "min_difficulty must be a desk-scale value in [1, 24]")

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        if "attacker_resource_ratio" in raw:
            r = float(raw.pop("attacker_resource_ratio"))
            if r < 0:
                raise ConfigError("attacker_resource_ratio must be nonnegative")
            raw.setdefault("attacker_resource_fraction", r / (1 + r))
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            for name in ("resource_churn", "peer_churn"):
                if name in raw:
                    raw[name] = ChurnSpec(**raw[name])
            if "delay" in raw:
                raw["delay"] = DelaySpec.from_dict(raw["delay"])
            return cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from None


def load_yaml(path: Union[str, Path]) -> dict:
    try:
        with open(path) as fp:
            data = yaml.safe_load(fp)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at top level")
    return data


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    data = load_yaml(path)
    data.pop("bounds", None)
    return ScenarioConfig.from_dict(data.get("scenario", data))
