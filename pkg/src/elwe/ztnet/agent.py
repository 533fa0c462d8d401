"""The agent stage: contextual checks, single-use grants and the model stub."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..errors import DomainError, FormatError
from ..formats import decode_ciphertexts
from ..lwe import decrypt_bytes
from .policy import Decision, Reason, Request, Verdict, _elapsed_us

HOUR_MS = 3600 * 1000
GPT_LATENCY_MS = 480
BERT_LATENCY_MS = 80
DEFAULT_LATENCY_MS = {"gpt": GPT_LATENCY_MS, "llama": GPT_LATENCY_MS,
                      "mistral": GPT_LATENCY_MS, "bert": BERT_LATENCY_MS}


class ModelService:
    """Echo stub standing in for hosted models: ``model:prompt`` after a delay."""

    def __init__(self, models=None, latency_ms: Optional[Mapping[str, float]] = None,
                 sleep=None):
        self.latency_ms = dict(DEFAULT_LATENCY_MS if latency_ms is None else latency_ms)
        self.models = set(DEFAULT_LATENCY_MS if models is None else models)
        self._sleep = sleep or (lambda ms: time.sleep(ms / 1000.0))

    def __call__(self, model: str, prompt: bytes) -> bytes:
        if model not in self.models:
            raise DomainError(f"model {model!r} is not served")
        delay = self.latency_ms.get(model, 0)
        if delay:
            self._sleep(delay)
        return model.encode() + b":" + prompt


def model_stub(model: str, prompt: bytes, service: Optional[ModelService] = None) -> bytes:
    return (service or ModelService())(model, prompt)


@dataclass(frozen=True)
class RoleRule:
    models: frozenset
    start_hour: int = 0
    end_hour: int = 24

    def in_window(self, now_ms: int) -> bool:
        hour = (now_ms // HOUR_MS) % 24
        return self.start_hour <= hour < self.end_hour


@dataclass(frozen=True)
class AgentContext:
    role: str
    now: int
    model: str


@dataclass(frozen=True)
class Grant:
    id: int
    model: str
    prompt: bytes = field(repr=False)


class Agent:
    """Validates broker-accepted requests and answers each grant exactly once."""

    def __init__(self, keyring, roles: Mapping[str, RoleRule], service: ModelService):
        self.keyring = keyring
        self.roles = dict(roles)
        self.service = service
        self._grants: dict = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def validate(self, request: Request, context: AgentContext) -> tuple:
        """Return ``(Decision, Grant or None)``."""
        started = time.perf_counter_ns()
        nbytes = len(request.payload)
        rule = self.roles.get(context.role)
        if rule is None or context.model not in rule.models or request.model != context.model:
            return Decision.reject(Reason.SCOPE_VIOLATION, started, nbytes), None
        if not rule.in_window(context.now):
            return Decision.reject(Reason.SCOPE_VIOLATION, started, nbytes), None
        try:
            _, _, cts = decode_ciphertexts(request.payload)
            prompt = decrypt_bytes(self.keyring.get(request.epoch).secret, cts)
        except (FormatError, DomainError):
            return Decision.reject(Reason.MALFORMED, started, nbytes), None
        with self._lock:
            grant = Grant(next(self._ids), request.model, prompt)
            self._grants[grant.id] = grant
        return Decision(Verdict.ACCEPT, Reason.OK, _elapsed_us(started), nbytes), grant

    def respond(self, grant: Grant) -> tuple:
        """Consume ``grant``; returns ``(Decision, body or None)``."""
        started = time.perf_counter_ns()
        with self._lock:
            live = self._grants.pop(grant.id, None)
            if live is None:
                return Decision.reject(Reason.EXPIRED_TOKEN, started, 0), None
        body = self.service(live.model, live.prompt)
        return Decision(Verdict.ACCEPT, Reason.OK, _elapsed_us(started), len(body)), body

    def handle(self, request: Request, context: AgentContext) -> tuple:
        decision, grant = self.validate(request, context)
        if grant is None:
            return decision, None
        return self.respond(grant)


def agent_validate(agent: Agent, request: Request, context: AgentContext) -> tuple:
    return agent.validate(request, context)


def default_roles(models) -> dict:
    return {"analyst": RoleRule(frozenset(models), 0, 24)}
