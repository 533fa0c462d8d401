"""Parameter morphisms between LWE triples, ciphertext transport and scheme switching."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .engel import CoefficientStream, next_seed, parse_seed
from .errors import DomainError, MorphismInvalid, TransitionFailed, UnknownScheme
from .lwe import (Ciphertext, LweParams, SecretKey, decrypt_bit, encrypt_bit,
                  encrypt_bit_from_stream, keygen)
from .noise import wasserstein_1d

DEFAULT_P = 13
MIN_TRIALS = 100


@dataclass(frozen=True)
class ParamTriple:
    n: int
    q: int
    sigma: float

    def __post_init__(self):
        if self.n < 2 or self.q < 2 or not self.sigma > 0:
            raise DomainError(f"invalid parameter triple {self}")

    @classmethod
    def parse(cls, text: str) -> "ParamTriple":
        try:
            n, q, sigma = text.split(",")
            return cls(int(n), int(q), float(sigma))
        except ValueError:
            raise DomainError(f"expected n,q,sigma, got {text!r}") from None

    def lwe(self, p: int = DEFAULT_P) -> LweParams:
        return LweParams(self.n, self.q, p, self.sigma)

    def __str__(self) -> str:
        return f"{self.n},{self.q},{self.sigma:g}"


def _sigma_ok(source: ParamTriple, target: ParamTriple) -> bool:
    # sigma2 <= sigma1 * sqrt(q2/q1)  <=>  sigma2^2 * q1 <= sigma1^2 * q2, done exactly
    s1 = Fraction(source.sigma)
    s2 = Fraction(target.sigma)
    return s2 * s2 * source.q <= s1 * s1 * target.q


@dataclass(frozen=True)
class ParamMorphism:
    source: ParamTriple
    target: ParamTriple

    def __post_init__(self):
        if self.target.q < self.source.q:
            raise MorphismInvalid("q2 >= q1",
                                  f"modulus decreases {self.source.q} -> {self.target.q}")
        if not _sigma_ok(self.source, self.target):
            raise MorphismInvalid("sigma2 <= sigma1*sqrt(q2/q1)",
                                  f"sigma {self.target.sigma} exceeds "
                                  f"{self.source.sigma}*sqrt({self.target.q}/{self.source.q})")

    @property
    def exact_scaling(self) -> bool:
        return self.target.q % self.source.q == 0

    @property
    def shrinks(self) -> bool:
        return self.target.n < self.source.n

    def then(self, other: "ParamMorphism") -> "ParamMorphism":
        if other.source != self.target:
            raise DomainError("morphisms do not compose: target != next source")
        return ParamMorphism(self.source, other.target)


def check_morphism(source: ParamTriple, target: ParamTriple) -> ParamMorphism:
    return ParamMorphism(source, target)


def identity(triple: ParamTriple) -> ParamMorphism:
    return ParamMorphism(triple, triple)


def _resize(vec: Sequence[int], n: int) -> list:
    vec = [int(v) for v in vec]
    return vec[:n] + [0] * max(0, n - len(vec))


def scale_mod(x: int, q1: int, q2: int) -> int:
    """x * q2/q1 reduced mod q2, rounded half-up when q1 does not divide q2."""
    if q2 % q1 == 0:
        return (x * (q2 // q1)) % q2
    return ((2 * x * q2 + q1) // (2 * q1)) % q2


def transport_key(f: ParamMorphism, s: Sequence[int]) -> np.ndarray:
    """Pad with zeros or truncate to n2, entries reduced mod q2."""
    if len(s) != f.source.n:
        raise DomainError(f"secret has length {len(s)}, expected {f.source.n}")
    return np.array(_resize(s, f.target.n), dtype=np.int64) % f.target.q


def transport_ciphertext(f: ParamMorphism, ct: Ciphertext) -> Ciphertext:
    """Resize c1 to n2 and scale both components by q2/q1.

    Scaling c1 as well as c2 is what makes <c1', s'> = (q2/q1) <c1, s>
    hold, so the centered decryption offset scales by the same factor and
    the decoded bit is unchanged.
    """
    q1, q2 = f.source.q, f.target.q
    if len(ct.c1) != f.source.n:
        raise DomainError(f"ciphertext has dimension {len(ct.c1)}, expected {f.source.n}")
    ct.validate(q1)
    c1 = tuple(scale_mod(x, q1, q2) for x in _resize(ct.c1, f.target.n))
    return Ciphertext(c1, scale_mod(ct.c2, q1, q2))


def transport_secret(f: ParamMorphism, sk) -> SecretKey:
    return SecretKey(f.target.lwe(sk.params.p), transport_key(f, sk.s))


# -- consistency score --------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyReport:
    score: float
    wasserstein: float
    error_rate: float
    epsilon_bound: float
    messages_tested: int
    deviation_score: float
    path_counts: dict = field(default_factory=dict)

    @property
    def within_bound(self) -> bool:
        return self.score >= 1 - self.epsilon_bound

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "wasserstein": self.wasserstein,
            "error_rate": self.error_rate,
            "epsilon_bound": self.epsilon_bound,
            "messages_tested": self.messages_tested,
            "deviation_score": self.deviation_score,
            "within_bound": self.within_bound,
            "path_counts": dict(self.path_counts),
        }


def epsilon_bound(target: ParamTriple) -> float:
    return target.sigma / target.q * math.sqrt(target.n)


def consistency_score(f: ParamMorphism, trials: int, seed, p: int = DEFAULT_P) -> ConsistencyReport:
    """Compare transported ciphertexts with direct encryptions under the target.

    Keys for both parameter sets come from ``seed``; encryption randomness
    from ``next_seed(seed)``; message bits from the stream after that. The
    source and target encryptions read separate copies of the same stream,
    so the identity morphism yields identical populations.
    """
    if trials < MIN_TRIALS:
        raise DomainError(f"trials must be >= {MIN_TRIALS}")
    seed = parse_seed(seed)
    src_kp = keygen(f.source.lwe(p), seed)
    dst_kp = keygen(f.target.lwe(p), seed)
    moved_sk = transport_secret(f, src_kp.secret)
    enc_seed = next_seed(seed)
    src_stream = CoefficientStream(enc_seed)
    dst_stream = CoefficientStream(enc_seed)
    bits = [a & 1 for a in CoefficientStream(next_seed(enc_seed)).next(trials)]

    moved_c2, direct_c2, errors, deviation = [], [], 0, 0.0
    for bit in bits:
        moved = transport_ciphertext(f, encrypt_bit_from_stream(src_kp.public, bit, src_stream))
        direct = encrypt_bit_from_stream(dst_kp.public, bit, dst_stream)
        errors += decrypt_bit(moved_sk, moved) != bit
        moved_c2.append(moved.c2)
        direct_c2.append(direct.c2)
        denom = abs(moved.c2) + abs(direct.c2)
        if denom:
            deviation += abs(moved.c2 - direct.c2) / denom

    w1 = wasserstein_1d(moved_c2, direct_c2)
    error_rate = errors / trials
    score = 1 - (w1 / max(f.source.q, f.target.q) + error_rate) / 2
    return ConsistencyReport(
        score=score, wasserstein=w1, error_rate=error_rate,
        epsilon_bound=epsilon_bound(f.target), messages_tested=trials,
        deviation_score=1 - deviation / trials,
        path_counts={"transport": trials})


# -- scheme registry ----------------------------------------------------------

@dataclass(frozen=True)
class SchemeDescriptor:
    """Entry points for one scheme; ``triple`` is None for non-LWE schemes."""

    name: str
    kind: str
    triple: Optional[ParamTriple]
    keygen: Callable
    encrypt: Callable
    decrypt: Callable
    seed: str = "0.5"


def lwe_scheme(name: str, triple: ParamTriple, seed="0.6180339887", p: int = DEFAULT_P):
    params = triple.lwe(p)
    return SchemeDescriptor(
        name, "lwe", triple,
        keygen=lambda s: (lambda kp: (kp.public, kp.secret))(keygen(params, s)),
        encrypt=encrypt_bit,
        decrypt=decrypt_bit,
        seed=str(seed))


@dataclass(frozen=True)
class XorCiphertext:
    value: int


def toy_xor_scheme(name: str = "toy-xor", seed="0.7071067811"):
    """One-bit XOR with a key bit; a deliberately trivial non-lattice scheme."""
    def kg(s):
        key = CoefficientStream(s).next(1)[0] & 1
        return key, key

    def enc(pk, bit, enc_seed):
        return XorCiphertext(bit ^ pk)

    def dec(sk, ct):
        return ct.value ^ sk

    return SchemeDescriptor(name, "xor", None, kg, enc, dec, str(seed))


def classical_stub_scheme(name: str = "ecdsa-stub"):
    """Placeholder for the classical half of a hybrid deployment: sign/verify are no-ops."""
    def kg(s):
        return None, None

    def enc(pk, bit, enc_seed):
        return XorCiphertext(bit)

    def dec(sk, ct):
        return ct.value

    return SchemeDescriptor(name, "classical-stub", None, kg, enc, dec)


@dataclass(frozen=True)
class TransitionItem:
    index: int
    path: str
    ok: bool


@dataclass(frozen=True)
class TransitionReport:
    source: str
    target: str
    items: tuple
    migrated: tuple = field(repr=False, default=())

    @property
    def path_counts(self) -> dict:
        counts = {"transport": 0, "re-encrypt": 0}
        for item in self.items:
            counts[item.path] += 1
        return counts

    @property
    def errors(self) -> int:
        return sum(not item.ok for item in self.items)

    def to_json(self) -> dict:
        return {"from": self.source, "to": self.target, "path_counts": self.path_counts,
                "errors": self.errors, "items": [item.__dict__ for item in self.items]}


class SchemeRegistry:
    """Registered schemes plus the active one. Writers are serialized by a lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict = {}
        self._keys: dict = {}
        self._active: Optional[str] = None

    def register(self, desc: SchemeDescriptor) -> None:
        keys = desc.keygen(desc.seed)
        with self._lock:
            self._entries = {**self._entries, desc.name: desc}
            self._keys = {**self._keys, desc.name: keys}
            if self._active is None:
                self._active = desc.name

    @property
    def active(self) -> str:
        return self._active

    def snapshot(self) -> tuple:
        """(active name, its descriptor, its keys), read consistently."""
        with self._lock:
            name = self._active
            return name, self._entries[name], self._keys[name]

    def get(self, name: str) -> SchemeDescriptor:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownScheme(f"unknown scheme {name!r}") from None

    def keys(self, name: str) -> tuple:
        self.get(name)
        return self._keys[name]

    def names(self) -> list:
        return list(self._entries)

    def _set_active(self, name: str) -> None:
        with self._lock:
            self._active = name


def transition_scheme(registry: SchemeRegistry, source: str, target: str,
                      in_flight: Sequence[tuple], reencrypt_seed="0.3090169943") -> TransitionReport:
    """Move every in-flight (ciphertext, secret) pair from ``source`` to ``target``.

    Items travel by transport when a non-shrinking morphism links the two LWE
    triples, otherwise by decrypt-and-re-encrypt under the target's key.
    Each migrated item is decrypted again and compared with its original bit.
    """
    src = registry.get(source)
    dst = registry.get(target)
    if source == target:
        registry._set_active(target)
        return TransitionReport(source, target, (), tuple(in_flight))

    morphism = None
    if src.triple is not None and dst.triple is not None:
        try:
            morphism = check_morphism(src.triple, dst.triple)
        except MorphismInvalid:
            morphism = None
        if morphism is not None and morphism.shrinks:
            morphism = None

    dst_pk, dst_sk = registry.keys(target)
    enc_stream = CoefficientStream(reencrypt_seed)
    items, migrated = [], []
    for index, (ct, sk) in enumerate(in_flight):
        bit = src.decrypt(sk, ct)
        if morphism is not None:
            new_ct = transport_ciphertext(morphism, ct)
            new_sk = transport_secret(morphism, sk)
            path = "transport"
        else:
            if dst.kind == "lwe":
                new_ct = encrypt_bit_from_stream(dst_pk, bit, enc_stream)
            else:
                new_ct = dst.encrypt(dst_pk, bit, reencrypt_seed)
            new_sk = dst_sk
            path = "re-encrypt"
        ok = dst.decrypt(new_sk, new_ct) == bit
        if not ok:
            raise TransitionFailed(index, f"item {index} undecryptable after {path}")
        items.append(TransitionItem(index, path, ok))
        migrated.append((new_ct, new_sk))
    registry._set_active(target)
    return TransitionReport(source, target, tuple(items), tuple(migrated))


def default_registry() -> SchemeRegistry:
    reg = SchemeRegistry()
    reg.register(lwe_scheme("lwe-256-4096", ParamTriple(256, 4096, 3.2)))
    reg.register(lwe_scheme("lwe-512-8192", ParamTriple(512, 8192, 3.2)))
    reg.register(toy_xor_scheme())
    reg.register(classical_stub_scheme())
    return reg
