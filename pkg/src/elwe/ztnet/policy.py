"""Tokens, policies, requests and the broker's ordered admission checks."""

from __future__ import annotations

import enum
import hashlib
import hmac
import ipaddress
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from ..errors import ConfigurationError, FormatError
from ..formats import decode_ciphertexts

PROOF_BYTES = 32
SECRET_BYTES = 32


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Reason(str, enum.Enum):
    OK = "ok"
    INVALID_TOKEN = "invalid_token"
    IP_NOT_WHITELISTED = "ip_not_whitelisted"
    EXPIRED_TOKEN = "expired_token"
    SCOPE_VIOLATION = "scope_violation"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Token:
    id: str
    secret: bytes = field(repr=False)
    model_scope: frozenset
    issued_at: int
    expires_at: int
    revoked: bool = False

    def __post_init__(self):
        if len(self.secret) != SECRET_BYTES:
            raise ConfigurationError(f"token {self.id}: secret must be {SECRET_BYTES} bytes")
        if not self.model_scope:
            raise ConfigurationError(f"token {self.id}: empty model scope")
        if self.expires_at <= self.issued_at:
            raise ConfigurationError(f"token {self.id}: expires_at <= issued_at")
        object.__setattr__(self, "model_scope", frozenset(self.model_scope))


@dataclass(frozen=True)
class Request:
    client_id: str
    source_ip: str
    token_id: str
    token_proof: bytes = field(repr=False)
    timestamp: int
    model: str
    payload: bytes = field(repr=False)
    epoch: int = 0

    def to_wire(self) -> dict:
        return {"client_id": self.client_id, "source_ip": self.source_ip,
                "token_id": self.token_id, "proof": self.token_proof.hex(),
                "ts": self.timestamp, "model": self.model,
                "payload": self.payload.hex(), "epoch": self.epoch}

    @classmethod
    def from_wire(cls, obj: Mapping) -> "Request":
        try:
            return cls(str(obj["client_id"]), str(obj["source_ip"]), str(obj["token_id"]),
                       bytes.fromhex(obj["proof"]), int(obj["ts"]), str(obj["model"]),
                       bytes.fromhex(obj["payload"]), int(obj.get("epoch", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed request: {exc}") from None

    def digest(self) -> str:
        """Cache key: identity of the query, independent of timestamp and proof."""
        h = hashlib.sha256()
        for part in (self.client_id, self.token_id, self.model):
            h.update(part.encode())
            h.update(b"\x00")
        h.update(self.payload)
        return h.hexdigest()


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    reason: Reason
    latency_us: int = 0
    bytes_processed: int = 0

    def __post_init__(self):
        if (self.verdict is Verdict.ACCEPT) != (self.reason is Reason.OK):
            raise ValueError("verdict is accept iff reason is ok")

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPT

    @classmethod
    def reject(cls, reason: Reason, started_ns: int, nbytes: int) -> "Decision":
        return cls(Verdict.REJECT, reason, _elapsed_us(started_ns), nbytes)


def _elapsed_us(started_ns: int) -> int:
    return max(0, (time.perf_counter_ns() - started_ns) // 1000)


def proof_message(client_id: str, timestamp: int, model: str, payload: bytes) -> bytes:
    return b"|".join([client_id.encode(), str(timestamp).encode(), model.encode(),
                      hashlib.sha256(payload).digest()])


def make_proof(secret: bytes, client_id: str, timestamp: int, model: str,
               payload: bytes) -> bytes:
    """HMAC-SHA256 over client_id | ts | model | sha256(payload)."""
    return hmac.new(secret, proof_message(client_id, timestamp, model, payload),
                    hashlib.sha256).digest()


class Policy:
    """Whitelist, token registry and model ACL.

    The token map is replaced wholesale on every write, so readers holding a
    reference always see a consistent snapshot without locking.
    """

    def __init__(self, ip_whitelist: Iterable[str], tokens: Iterable[Token],
                 model_acl: Mapping[str, str], clock_skew_ms: int = 0):
        try:
            self.ip_whitelist = tuple(ipaddress.ip_network(c, strict=False) for c in ip_whitelist)
        except ValueError as exc:
            raise ConfigurationError(f"invalid CIDR: {exc}") from None
        if clock_skew_ms < 0:
            raise ConfigurationError("clock_skew_ms must be >= 0")
        self.model_acl = dict(model_acl)
        self.clock_skew_ms = clock_skew_ms
        self._tokens = {t.id: t for t in tokens}
        self._write = threading.Lock()

    @property
    def tokens(self) -> Mapping[str, Token]:
        return self._tokens

    def add_token(self, token: Token) -> None:
        with self._write:
            self._tokens = {**self._tokens, token.id: token}

    def revoke(self, token_id: str) -> None:
        with self._write:
            if token_id in self._tokens:
                self._tokens = {**self._tokens,
                                token_id: replace(self._tokens[token_id], revoked=True)}

    def ip_allowed(self, ip: str) -> bool:
        addr = ipaddress.ip_address(ip)
        return any(addr in net for net in self.ip_whitelist)

    @property
    def models(self) -> list:
        return sorted(self.model_acl)


def broker_validate(policy: Policy, request: Request, now: int) -> Decision:
    """IP, then token, then expiry, then MAC, then scope; first failure wins."""
    started = time.perf_counter_ns()
    nbytes = len(request.payload) + len(request.token_proof)
    try:
        ip_ok = policy.ip_allowed(request.source_ip)
    except ValueError:
        return Decision.reject(Reason.MALFORMED, started, nbytes)
    if not ip_ok:
        return Decision.reject(Reason.IP_NOT_WHITELISTED, started, nbytes)

    token = policy.tokens.get(request.token_id)
    if token is None or token.revoked:
        return Decision.reject(Reason.INVALID_TOKEN, started, nbytes)

    skew = policy.clock_skew_ms
    if not token.issued_at - skew <= now <= token.expires_at + skew:
        return Decision.reject(Reason.EXPIRED_TOKEN, started, nbytes)

    if len(request.token_proof) != PROOF_BYTES:
        return Decision.reject(Reason.MALFORMED, started, nbytes)
    expected = make_proof(token.secret, request.client_id, request.timestamp,
                          request.model, request.payload)
    if not hmac.compare_digest(expected, request.token_proof):
        return Decision.reject(Reason.INVALID_TOKEN, started, nbytes)

    required = policy.model_acl.get(request.model)
    if required is None or required not in token.model_scope:
        return Decision.reject(Reason.SCOPE_VIOLATION, started, nbytes)

    try:
        decode_ciphertexts(request.payload)
    except (FormatError, ValueError):
        return Decision.reject(Reason.MALFORMED, started, nbytes)
    return Decision(Verdict.ACCEPT, Reason.OK, _elapsed_us(started), nbytes)


def token_from_config(obj: Mapping) -> Token:
    try:
        scope = obj["scope"]
        scope = [scope] if isinstance(scope, str) else list(scope)
        return Token(str(obj["id"]), bytes.fromhex(obj["secret_hex"]), frozenset(scope),
                     int(obj["issued_at"]), int(obj["expires_at"]),
                     bool(obj.get("revoked", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad token entry: {exc}") from None


def policy_from_config(obj: Mapping) -> Policy:
    """Build a Policy from the policy.json schema."""
    try:
        models = obj.get("models", {})
        if isinstance(models, list):
            models = {m: m for m in models}
        return Policy(obj["whitelist"], [token_from_config(t) for t in obj["tokens"]],
                      models, int(obj.get("clock_skew_ms", 0)))
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigurationError(f"bad policy: {exc}") from None


def request_for(token: Token, client_id: str, source_ip: str, model: str,
                payload: bytes, timestamp: int, epoch: int = 0,
                token_id: Optional[str] = None) -> Request:
    """A correctly signed request; ``token_id`` overrides the presented id."""
    proof = make_proof(token.secret, client_id, timestamp, model, payload)
    return Request(client_id, source_ip, token_id or token.id, proof, timestamp, model,
                   payload, epoch)
