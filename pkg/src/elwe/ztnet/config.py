"""policy.json loading and pipeline assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from ..errors import ConfigurationError
from ..lwe import LweParams
from .agent import Agent, ModelService, RoleRule, default_roles
from .keyring import KeyRing
from .pipeline import DEFAULT_ADMISSION, Pipeline
from .policy import Policy, policy_from_config
from .transport import RealClock

DEFAULT_LWE = {"params": "256,4096,13,3.2", "seed": "0.8660254037"}
HOUR_MS = 3600 * 1000


@dataclass(frozen=True)
class ZtConfig:
    policy: Policy
    params: LweParams
    seed: str
    rotate_hours: float
    rotate_requests: int
    roles: dict
    latency_ms: Optional[dict]
    admission: int

    def keyring(self, now_ms: int = 0) -> KeyRing:
        return KeyRing(self.params, self.seed, int(self.rotate_hours * HOUR_MS),
                       self.rotate_requests, now_ms=now_ms)

    def agent(self, models=None, sleep=None, now_ms: int = 0) -> Agent:
        service = ModelService(models or self.policy.models, self.latency_ms, sleep)
        return Agent(self.keyring(now_ms), self.roles, service)

    def pipeline(self, agent=None, clock=None, models=None, sleep=None) -> Pipeline:
        clock = clock or RealClock()
        now = clock.now_ms()
        return Pipeline(self.policy, agent or self.agent(models, sleep, now), clock=clock,
                        admission=self.admission)


def _roles(obj: Optional[Mapping], models) -> dict:
    if not obj:
        return default_roles(models)
    try:
        return {name: RoleRule(frozenset(rule["models"]), int(rule.get("start_hour", 0)),
                               int(rule.get("end_hour", 24)))
                for name, rule in obj.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad roles: {exc}") from None


def load_config(obj: Mapping) -> ZtConfig:
    policy = policy_from_config(obj)
    lwe = {**DEFAULT_LWE, **obj.get("lwe", {})}
    rotation = obj.get("rotation", {})
    try:
        return ZtConfig(
            policy=policy,
            params=LweParams.parse(lwe["params"]),
            seed=str(lwe["seed"]),
            rotate_hours=float(rotation.get("hours", 24)),
            rotate_requests=int(rotation.get("requests", 1000)),
            roles=_roles(obj.get("roles"), policy.models),
            latency_ms=obj.get("latency_ms"),
            admission=int(obj.get("max_clients", DEFAULT_ADMISSION)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad config: {exc}") from None
