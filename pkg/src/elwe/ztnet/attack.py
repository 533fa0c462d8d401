"""Synthetic attack traffic, replay traces and a repeated-plaintext CPA probe."""

from __future__ import annotations

import hashlib
import ipaddress
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from ..engel import CoefficientStream
from ..errors import DomainError
from ..formats import encode_ciphertexts
from ..lwe import LweParams, encrypt_bit_from_stream, encrypt_bytes, keygen
from .cache import LruCache
from .metrics import MetricsLedger
from .policy import Policy, Reason, Token, broker_validate, request_for

REFERENCE_MIX = (350, 420, 230)
DEFAULT_WHITELIST = ("10.0.0.0/8", "192.168.0.0/16", "127.0.0.0/8")
DEFAULT_MODELS = ("gpt", "bert", "llama", "mistral")
DAY_MS = 24 * 3600 * 1000


@dataclass(frozen=True)
class AttackMix:
    invalid_token: int
    ip_not_whitelisted: int
    expired_token: int

    def __post_init__(self):
        if min(self.invalid_token, self.ip_not_whitelisted, self.expired_token) < 0:
            raise DomainError("attack counts must be >= 0")

    @property
    def total(self) -> int:
        return self.invalid_token + self.ip_not_whitelisted + self.expired_token

    @classmethod
    def parse(cls, text: str) -> "AttackMix":
        try:
            a, b, c = (int(x) for x in text.split(","))
        except ValueError:
            raise DomainError(f"expected three counts, got {text!r}") from None
        return cls(a, b, c)


def _secret(label: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}:{label}".encode()).digest()


def default_policy(now: int, seed: int = 0, clock_skew_ms: int = 1000) -> Policy:
    """One active token per model, an expired token and a private-range whitelist."""
    tokens = [Token(f"tok-{m}", _secret(m, seed), frozenset({m}), now - DAY_MS, now + DAY_MS)
              for m in DEFAULT_MODELS]
    tokens.append(Token("tok-stale", _secret("stale", seed), frozenset(DEFAULT_MODELS),
                        now - 3 * DAY_MS, now - 2 * DAY_MS))
    return Policy(DEFAULT_WHITELIST, tokens, {m: m for m in DEFAULT_MODELS}, clock_skew_ms)


def sample_payload(seed="0.1234567891", message: bytes = b"hi") -> bytes:
    """A small, well-formed ELWC payload for synthetic traffic."""
    params = LweParams(16, 4096, 13, 3.2)
    kp = keygen(params, seed)
    return encode_ciphertexts(encrypt_bytes(kp.public, message, seed), params.n, params.q)


def _whitelisted_ip(policy: Policy, rng: random.Random) -> str:
    net = policy.ip_whitelist[rng.randrange(len(policy.ip_whitelist))]
    return str(net.network_address + rng.randrange(net.num_addresses))


def _outside_ip(policy: Policy, rng: random.Random) -> str:
    while True:
        ip = str(ipaddress.IPv4Address(rng.getrandbits(32)))
        if not policy.ip_allowed(ip):
            return ip


def _active_tokens(policy: Policy, now: int) -> list:
    skew = policy.clock_skew_ms
    return [t for t in policy.tokens.values()
            if not t.revoked and t.issued_at - skew <= now <= t.expires_at + skew]


def _expired_tokens(policy: Policy, now: int) -> list:
    return [t for t in policy.tokens.values()
            if not t.revoked and now > t.expires_at + policy.clock_skew_ms]


def synthesize(policy: Policy, mix: AttackMix, seed: int, now: int, legit: int = 0,
               payload: Optional[bytes] = None) -> list:
    """``[(Request, expected Reason), ...]`` in a seeded random order."""
    rng = random.Random(seed)
    payload = sample_payload() if payload is None else payload
    active = _active_tokens(policy, now)
    expired = _expired_tokens(policy, now)
    if (mix.ip_not_whitelisted or legit) and not active:
        raise DomainError("policy has no active token to build requests from")
    if mix.expired_token and not expired:
        raise DomainError("policy has no expired token for expired-token attacks")
    by_scope = {m: [t for t in active if policy.model_acl[m] in t.model_scope]
                for m in policy.models}
    served = [m for m in policy.models if by_scope[m]]

    out = []
    for k in range(mix.invalid_token):
        token_id = f"forged-{rng.getrandbits(48):012x}"
        forged = Token(token_id, rng.randbytes(32), frozenset({"gpt"}), 0, 1)
        out.append((request_for(forged, f"attacker-{k}", _whitelisted_ip(policy, rng),
                                rng.choice(policy.models), payload, now),
                    Reason.INVALID_TOKEN))
    for k in range(mix.ip_not_whitelisted):
        model = rng.choice(served)
        token = rng.choice(by_scope[model])
        out.append((request_for(token, f"spoofer-{k}", _outside_ip(policy, rng), model,
                                payload, now), Reason.IP_NOT_WHITELISTED))
    for k in range(mix.expired_token):
        token = rng.choice(expired)
        model = rng.choice(sorted(m for m in policy.models
                                  if policy.model_acl[m] in token.model_scope))
        out.append((request_for(token, f"stale-{k}", _whitelisted_ip(policy, rng), model,
                                payload, now), Reason.EXPIRED_TOKEN))
    for k in range(legit):
        model = rng.choice(served)
        token = rng.choice(by_scope[model])
        out.append((request_for(token, f"client-{k}", _whitelisted_ip(policy, rng), model,
                                payload, now), Reason.OK))
    rng.shuffle(out)
    return out


def run_attack_suite(policy: Policy, mix: AttackMix, seed: int, legit: int = 0,
                     now: Optional[int] = None) -> MetricsLedger:
    """Fire synthesized traffic through broker_validate and tally the decisions.

    Every decision is compared with the reason the request was built to
    trigger; disagreements land in ``ledger.ground_truth_mismatches``.
    """
    if mix.total + legit < 1:
        raise DomainError("attack mix must contain at least one request")
    if now is None:
        now = max((t.issued_at for t in policy.tokens.values()), default=0) + 1
    ledger = MetricsLedger()
    for request, expected in synthesize(policy, mix, seed, now, legit):
        decision = broker_validate(policy, request, now)
        ledger.record_decision(decision)
        if decision.reason is not expected:
            ledger.ground_truth_mismatches += 1
    return ledger


def replay_trace(length: int, duplicate_ratio: float, seed: int) -> list:
    """Request keys where each position repeats a recent key with probability ``duplicate_ratio``.

    Repeats are drawn from the last 8 distinct keys, inside a 16-entry cache's reach.
    """
    if not 0 <= duplicate_ratio <= 1 or length < 1:
        raise DomainError("need length >= 1 and duplicate_ratio in [0, 1]")
    rng = random.Random(seed)
    trace, recent, fresh = [], [], 0
    for _ in range(length):
        if recent and rng.random() < duplicate_ratio:
            trace.append(rng.choice(recent))
        else:
            key = f"q{fresh}"
            fresh += 1
            recent = (recent + [key])[-8:]
            trace.append(key)
    return trace


def trace_hit_rate(trace: Sequence[str], capacity: int = 16) -> float:
    cache = LruCache(capacity)
    for key in trace:
        if cache.get(key) is None:
            cache.put(key, key)
    return cache.hit_rate


def cpa_distinct_fraction(pk, bit: int, trials: int, seed) -> float:
    """Fraction of distinct ciphertexts over repeated encryptions of one bit."""
    if trials < 2:
        raise DomainError("trials must be >= 2")
    stream = CoefficientStream(seed)
    seen = {encrypt_bit_from_stream(pk, bit, stream) for _ in range(trials)}
    return len(seen) / trials
