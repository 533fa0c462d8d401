"""Broker, cache and agent wired into one request handler."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..errors import DomainError, FormatError
from .agent import Agent, AgentContext
from .cache import LruCache
from .metrics import MetricsLedger
from .policy import Decision, Policy, Reason, Request, broker_validate
from .transport import RealClock, decode_frame, encode_frame

DEFAULT_ADMISSION = 8


@dataclass(frozen=True)
class Response:
    status: str
    reason: str
    body: bytes = b""
    epoch: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_wire(self) -> dict:
        return {"status": self.status, "reason": self.reason, "body": self.body.hex(),
                "epoch": self.epoch}

    @classmethod
    def from_wire(cls, obj) -> "Response":
        try:
            return cls(obj["status"], obj["reason"], bytes.fromhex(obj["body"]),
                       int(obj["epoch"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed response: {exc}") from None


def _ms_since(start_ns: int) -> float:
    return (time.perf_counter_ns() - start_ns) / 1e6


class Pipeline:
    """client -> broker -> cache -> agent -> model, with metrics.

    Broker validation runs on every request, cache hits included. At most
    ``admission`` requests are inside the pipeline at once; others wait.
    """

    def __init__(self, policy: Policy, agent: Agent, cache: Optional[LruCache] = None,
                 ledger: Optional[MetricsLedger] = None, clock=None, role: str = "analyst",
                 admission: int = DEFAULT_ADMISSION):
        self.policy = policy
        self.agent = agent
        self.cache = cache if cache is not None else LruCache()
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self.clock = clock or RealClock()
        self.role = role
        self._slots = threading.BoundedSemaphore(admission)

    @property
    def epoch(self) -> int:
        return self.agent.keyring.epoch

    def _reject(self, decision: Decision) -> Response:
        self.ledger.record_decision(decision)
        return Response("rejected", decision.reason.value, b"", self.epoch)

    def handle(self, request: Request, now: Optional[int] = None,
               role: Optional[str] = None) -> Response:
        with self._slots:
            return self._handle(request, self.clock.now_ms() if now is None else now,
                                role or self.role)

    def _handle(self, request: Request, now: int, role: str) -> Response:
        start = time.perf_counter_ns()
        decision = broker_validate(self.policy, request, now)
        if not decision.accepted:
            return self._reject(decision)

        key = request.digest()
        cached = self.cache.get(key)
        self.ledger.record_cache(cached is not None)
        if cached is not None:
            self.ledger.record_decision(decision)
            return Response("ok", Reason.OK.value, cached, self.epoch)

        t0 = time.perf_counter_ns()
        agent_decision, grant = self.agent.validate(request, AgentContext(role, now, request.model))
        self.ledger.record_component("decrypt", _ms_since(t0))
        if grant is None:
            return self._reject(agent_decision)
        t1 = time.perf_counter_ns()
        try:
            reply, body = self.agent.respond(grant)
        except DomainError:
            return self._reject(Decision.reject(Reason.SCOPE_VIOLATION, t1, 0))
        self.ledger.record_component("model", _ms_since(t1))
        if body is None:
            return self._reject(reply)
        self.cache.put(key, body)
        self.agent.keyring.note_request(now)
        self.ledger.record_decision(decision)
        self.ledger.record_component("total", _ms_since(start))
        return Response("ok", Reason.OK.value, body, self.epoch)

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            request = Request.from_wire(decode_frame(frame))
        except FormatError:
            started = time.perf_counter_ns()
            return encode_frame(self._reject(
                Decision.reject(Reason.MALFORMED, started, len(frame))).to_wire())
        return encode_frame(self.handle(request).to_wire())
