"""Threaded TCP broker and agent speaking length-prefixed JSON frames."""

from __future__ import annotations

import logging
import socketserver
from dataclasses import dataclass, field, replace
from typing import Optional

from ..errors import FormatError
from .agent import Agent, AgentContext
from .pipeline import Pipeline, Response
from .policy import Decision, Reason, Request, Verdict
from .transport import decode_frame, encode_frame, read_frame, write_frame

log = logging.getLogger("elwe.ztnet")


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        peer = self.client_address[0]
        while True:
            try:
                obj = read_frame(self.request)
            except (ConnectionError, OSError):
                return
            except FormatError as exc:
                log.info("bad frame from %s: %s", peer, exc)
                write_frame(self.request, Response("rejected", Reason.MALFORMED.value).to_wire())
                return
            write_frame(self.request, self.server.process(obj, peer))


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    @property
    def address(self) -> tuple:
        return self.server_address[:2]


class BrokerServer(_Server):
    """Front door. By default the socket peer address overrides the frame's source_ip."""

    def __init__(self, address, pipeline: Pipeline, trust_frame_ip: bool = False):
        super().__init__(address, _FrameHandler)
        self.pipeline = pipeline
        self.trust_frame_ip = trust_frame_ip

    def process(self, obj, peer: str) -> dict:
        try:
            request = Request.from_wire(obj)
        except FormatError:
            return self.pipeline._reject(Decision(Verdict.REJECT, Reason.MALFORMED)).to_wire()
        if not self.trust_frame_ip:
            request = replace(request, source_ip=peer)
        return self.pipeline.handle(request).to_wire()


class AgentServer(_Server):
    """Answers broker-approved requests: {"request", "role", "now"} -> response."""

    def __init__(self, address, agent: Agent):
        super().__init__(address, _FrameHandler)
        self.agent = agent

    def process(self, obj, peer: str) -> dict:
        try:
            request = Request.from_wire(obj["request"])
            context = AgentContext(str(obj["role"]), int(obj["now"]), request.model)
        except (FormatError, KeyError, TypeError, ValueError):
            return Response("rejected", Reason.MALFORMED.value,
                            epoch=self.agent.keyring.epoch).to_wire()
        try:
            decision, body = self.agent.handle(request, context)
        except Exception:
            log.exception("agent failure")
            decision, body = Decision(Verdict.REJECT, Reason.SCOPE_VIOLATION), None
        epoch = self.agent.keyring.epoch
        if body is None:
            return Response("rejected", decision.reason.value, epoch=epoch).to_wire()
        self.agent.keyring.note_request(context.now)
        return Response("ok", Reason.OK.value, body, epoch).to_wire()


@dataclass
class _EpochView:
    epoch: int = 0

    def note_request(self, now_ms: int) -> int:
        return self.epoch


@dataclass(frozen=True)
class RemoteGrant:
    id: int
    model: str
    body: bytes = field(repr=False)


class RemoteAgent:
    """Agent-shaped proxy that forwards to an AgentServer over a transport."""

    def __init__(self, transport):
        self.transport = transport
        self.keyring = _EpochView()

    def validate(self, request: Request, context: AgentContext) -> tuple:
        frame = encode_frame({"request": request.to_wire(), "role": context.role,
                              "now": context.now})
        reply = Response.from_wire(decode_frame(self.transport.send(frame)))
        self.keyring.epoch = reply.epoch
        if not reply.ok:
            return Decision(Verdict.REJECT, Reason(reply.reason)), None
        return Decision(Verdict.ACCEPT, Reason.OK), RemoteGrant(0, request.model, reply.body)

    def respond(self, grant: RemoteGrant) -> tuple:
        return Decision(Verdict.ACCEPT, Reason.OK, 0, len(grant.body)), grant.body


def parse_address(text: str, default_host: str = "127.0.0.1") -> tuple:
    host, _, port = text.rpartition(":")
    try:
        return (host or default_host, int(port))
    except ValueError:
        raise FormatError(f"bad address {text!r}, expected host:port") from None


def serve(server: _Server, ready: Optional[callable] = None) -> None:
    if ready:
        ready(server.address)
    try:
        server.serve_forever()
    finally:
        server.server_close()
