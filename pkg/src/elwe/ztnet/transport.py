"""Length-prefixed JSON frames, transports, clocks and the retrying client."""

from __future__ import annotations

import json
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from ..errors import FormatError, TransportFailure

MAX_FRAME = 16 << 20
_LEN = struct.Struct("<I")


def encode_frame(obj) -> bytes:
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FormatError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def decode_frame(data: bytes):
    """Decode exactly one frame from ``data``."""
    if len(data) < _LEN.size:
        raise FormatError("frame truncated")
    (length,) = _LEN.unpack_from(data)
    if length > MAX_FRAME or len(data) != _LEN.size + length:
        raise FormatError("frame length mismatch")
    try:
        return json.loads(data[_LEN.size:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad frame body: {exc}") from None


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket):
    header = _recv_exact(sock, _LEN.size)
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise FormatError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return decode_frame(header + _recv_exact(sock, length))


def write_frame(sock: socket.socket, obj) -> None:
    sock.sendall(encode_frame(obj))


# -- clocks --------------------------------------------------------------------

class SimClock:
    """Simulated milliseconds; ``sleep`` advances time instantly."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()
        self.sleeps: list = []

    def now_ms(self) -> int:
        return self._now

    def sleep(self, ms: float) -> None:
        with self._lock:
            self.sleeps.append(ms)
            self._now += int(round(ms))


class RealClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep(self, ms: float) -> None:
        time.sleep(ms / 1000.0)


# -- transports ------------------------------------------------------------------

class InMemoryTransport:
    """Calls ``handler(frame_bytes) -> frame_bytes`` in process.

    ``drops`` is a schedule: the k-th send fails when the k-th entry is true.
    Sends past the end of the schedule succeed unless ``drop_forever``.
    """

    def __init__(self, handler: Callable[[bytes], bytes], drops: Iterable[bool] = (),
                 drop_forever: bool = False):
        self.handler = handler
        self.drops = list(drops)
        self.drop_forever = drop_forever
        self.sends = 0

    @classmethod
    def dropping_first(cls, handler, count: int) -> "InMemoryTransport":
        return cls(handler, [True] * count)

    def send(self, frame: bytes) -> bytes:
        k = self.sends
        self.sends += 1
        drop = self.drops[k] if k < len(self.drops) else self.drop_forever
        if drop:
            raise ConnectionError(f"simulated drop on send {k + 1}")
        return self.handler(frame)

    def reconnect(self) -> None:
        pass


class TcpTransport:
    """One connection, re-established on demand after a failure."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.address = (host, port)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        return self._sock

    def send(self, frame: bytes) -> bytes:
        try:
            sock = self._connect()
            sock.sendall(frame)
            header = _recv_exact(sock, _LEN.size)
            (length,) = _LEN.unpack(header)
            if length > MAX_FRAME:
                raise FormatError("response frame too large")
            return header + _recv_exact(sock, length)
        except OSError:
            self.reconnect()
            raise

    def reconnect(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    close = reconnect


# -- client --------------------------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    jitter_ms: tuple = (100, 300)


@dataclass(frozen=True)
class ReconnectPolicy:
    base_ms: int = 500
    cap_ms: int = 5000

    def backoff(self, failure_index: int) -> int:
        return min(self.cap_ms, self.base_ms << failure_index)


@dataclass(frozen=True)
class Attempt:
    number: int
    ok: bool
    error: str = ""
    backoff_ms: int = 0
    jitter_ms: int = 0


@dataclass
class SendResult:
    response: dict
    attempts: list = field(default_factory=list)

    @property
    def retries(self) -> int:
        return len(self.attempts) - 1

    @property
    def backoffs(self) -> list:
        return [a.backoff_ms for a in self.attempts if not a.ok]


def client_send(request_frame, transport, retry: RetryPolicy = RetryPolicy(),
                reconnect: ReconnectPolicy = ReconnectPolicy(), clock=None,
                rng_seed: int = 0, ledger=None) -> SendResult:
    """Send one frame, retrying on transport loss.

    Failure k (0-based) waits min(base * 2**k, cap) plus a uniform jitter from
    ``retry.jitter_ms`` before reconnecting. At most ``1 + max_retries``
    attempts; exhausting them raises TransportFailure with the history.
    """
    clock = clock or RealClock()
    rng = random.Random(rng_seed)
    frame = request_frame if isinstance(request_frame, bytes) else encode_frame(request_frame)
    attempts: list = []
    for k in range(retry.max_retries + 1):
        try:
            reply = transport.send(frame)
        except (ConnectionError, OSError, TimeoutError) as exc:
            backoff = reconnect.backoff(k)
            jitter = rng.randint(*retry.jitter_ms)
            attempts.append(Attempt(k + 1, False, str(exc), backoff, jitter))
            if k < retry.max_retries:
                clock.sleep(backoff + jitter)
                transport.reconnect()
            continue
        attempts.append(Attempt(k + 1, True))
        if ledger is not None:
            ledger.record_reconnect(len(attempts) - 1, True)
        return SendResult(decode_frame(reply), attempts)
    if ledger is not None:
        ledger.record_reconnect(len(attempts) - 1, False)
    raise TransportFailure(f"gave up after {len(attempts)} attempts", attempts)
