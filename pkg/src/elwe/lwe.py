"""Regev-style LWE whose randomness comes entirely from Engel coefficient streams.

Key generation consumes one stream in a fixed order: the ``n*n`` entries of
``A`` (row-major, ``a_k mod p``), then ``s`` (``a_k mod q``), then the ``n``
coefficients feeding the error vector. Encryption draws the binary vector
``r`` (``a_k mod 2``) from a separate stream seeded by the caller.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .engel import CoefficientStream, parse_seed, seed_to_str
from .errors import DegenerateRandomness, DomainError, GenerationExhausted, ParamsInvalid

MAX_R_RETRIES = 16
ALPHA_DRAW_FACTOR = 10


@dataclass(frozen=True)
class LweParams:
    n: int
    q: int
    p: int
    sigma: float
    alpha: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise ParamsInvalid(f"dimension n={self.n} must be >= 2")
        if not self.q > self.p >= 2:
            raise ParamsInvalid(f"need q > p >= 2, got q={self.q}, p={self.p}")
        if not self.sigma > 0:
            raise ParamsInvalid(f"sigma must be positive, got {self.sigma}")
        if self.q >= 1 << 32:
            raise ParamsInvalid("q must fit in 32 bits")
        if self.alpha is not None and self.alpha < 1:
            raise ParamsInvalid("alpha must be a positive integer")
        if self.noise_bound < 1:
            raise ParamsInvalid(
                f"no decryption headroom: q={self.q} too small for n={self.n}")

    @property
    def noise_bound(self) -> int:
        # 4nB <= q - 2 keeps |e.r| strictly inside the q/4 decision margin
        # for both parities of q.
        return min(math.floor(3 * self.sigma), (self.q - 2) // (4 * self.n))

    @property
    def half_q(self) -> int:
        return self.q // 2

    @classmethod
    def parse(cls, text: str) -> "LweParams":
        """``"n,q,p,sigma"`` or ``"n,q,p,sigma,alpha"``."""
        parts = [t.strip() for t in text.split(",")]
        if len(parts) not in (4, 5):
            raise ParamsInvalid(f"expected n,q,p,sigma[,alpha], got {text!r}")
        try:
            n, q, p = (int(x) for x in parts[:3])
            sigma = float(parts[3])
            alpha = int(parts[4]) if len(parts) == 5 else None
        except ValueError as exc:
            raise ParamsInvalid(str(exc)) from None
        return cls(n, q, p, sigma, alpha)

    def __str__(self) -> str:
        s = f"{self.n},{self.q},{self.p},{self.sigma:g}"
        return s if self.alpha is None else f"{s},{self.alpha}"


def _frozen(values, dtype=np.int64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _dot_mod(M: np.ndarray, v: np.ndarray, q: int, bound: int) -> np.ndarray:
    """(M @ v) mod q without int64 overflow; ``bound`` caps |entries| of M."""
    inner = M.shape[-1]
    vmax = int(np.max(np.abs(v))) if v.size else 0
    if bound * vmax * inner < 1 << 62:
        return np.asarray(M @ v) % q
    out = M.astype(object) @ v.astype(object)
    return np.array([int(x) % q for x in np.atleast_1d(out)], dtype=np.int64).reshape(np.shape(out))


def fingerprint(seed: Fraction) -> str:
    return hashlib.sha256(seed_to_str(seed).encode()).hexdigest()[:32]


@dataclass(frozen=True)
class PublicKey:
    params: LweParams
    A: np.ndarray = field(repr=False, compare=False)
    b: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class SecretKey:
    params: LweParams
    s: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True, eq=False)
class KeyPair:
    params: LweParams
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    e: np.ndarray = field(repr=False)
    seed_fingerprint: str = ""

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.params, self.A, self.b)

    @property
    def secret(self) -> SecretKey:
        return SecretKey(self.params, self.s)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeyPair):
            return NotImplemented
        return (self.params == other.params
                and self.seed_fingerprint == other.seed_fingerprint
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("A", "b", "s", "e")))

    __hash__ = None


@dataclass(frozen=True)
class Ciphertext:
    c1: tuple
    c2: int

    def validate(self, q: int) -> None:
        if not 0 <= self.c2 < q or any(not 0 <= c < q for c in self.c1):
            raise DomainError("ciphertext entry outside [0, q)")


def centered_errors(block: Sequence[int], bound: int) -> list:
    """Map n stream coefficients to errors in [-bound, bound].

    raw e_i = (1/n) * sum_{j != i} (c_j - c_i) = (S - n c_i) / n, rounded
    half-up to an integer, then reduced mod 2*bound+1 and centered.
    """
    n = len(block)
    total = sum(block)
    width = 2 * bound + 1
    out = []
    for c in block:
        num = total - n * c
        v = (2 * num + n) // (2 * n)
        out.append((v + bound) % width - bound)
    return out


def _draw_matrix(stream: CoefficientStream, params: LweParams) -> list:
    n2 = params.n * params.n
    if params.alpha is None:
        return [a % params.p for a in stream.next(n2)]
    budget = ALPHA_DRAW_FACTOR * n2
    accepted: list = []
    drawn = 0
    while len(accepted) < n2:
        if drawn >= budget:
            raise GenerationExhausted(
                f"alpha={params.alpha} accepted {len(accepted)}/{drawn} draws "
                f"({len(accepted) / drawn:.2%}); budget {budget} exhausted")
        chunk = stream.next(min(n2, budget - drawn))
        drawn += len(chunk)
        accepted.extend(a % params.p for a in chunk if a <= params.alpha)
    return accepted[:n2]


def keygen(params: LweParams, seed) -> KeyPair:
    """Deterministic key pair for ``(params, seed)``."""
    seed = parse_seed(seed)
    n, q = params.n, params.q
    stream = CoefficientStream(seed)
    A = _frozen(_draw_matrix(stream, params)).reshape(n, n)
    s = _frozen([a % q for a in stream.next(n)])
    e = _frozen(centered_errors(stream.next(n), params.noise_bound))
    b = _frozen((_dot_mod(A, s, q, params.p) + e) % q)
    return KeyPair(params, A, b, s, e, fingerprint(seed))


def regenerate_keypair(params: LweParams, seed) -> KeyPair:
    """Rebuild a key pair from its seed; storage only needs (params, seed)."""
    return keygen(params, seed)


def _draw_r(stream: CoefficientStream, n: int) -> np.ndarray:
    for _ in range(MAX_R_RETRIES + 1):
        r = np.array([a & 1 for a in stream.next(n)], dtype=np.int64)
        if r.any():
            return r
    raise DegenerateRandomness(f"r was the zero vector {MAX_R_RETRIES + 1} times")


def encrypt_with_vector(pk, bit: int, r: Sequence[int]) -> Ciphertext:
    """c1 = A^T r mod q, c2 = b.r + bit * floor(q/2) mod q for an explicit r."""
    if bit not in (0, 1):
        raise DomainError(f"bit must be 0 or 1, got {bit!r}")
    params = pk.params
    q = params.q
    r = np.asarray(r, dtype=np.int64)
    c1 = _dot_mod(pk.A.T, r, q, params.p)
    c2 = (int(_dot_mod(pk.b[None, :], r, q, q)[0]) + bit * params.half_q) % q
    return Ciphertext(tuple(int(x) for x in c1), c2)


def encrypt_bit_from_stream(pk, bit: int, stream: CoefficientStream) -> Ciphertext:
    return encrypt_with_vector(pk, bit, _draw_r(stream, pk.params.n))


def encrypt_bit(pk, bit: int, encryption_seed) -> Ciphertext:
    return encrypt_bit_from_stream(pk, bit, CoefficientStream(encryption_seed))


def decryption_offset(sk, ct: Ciphertext) -> int:
    """(c2 - s.c1) mod q, centered into (-q/2, q/2]."""
    q = sk.params.q
    d = (ct.c2 - int(_dot_mod(sk.s[None, :], np.asarray(ct.c1, dtype=np.int64), q, q)[0])) % q
    return d - q if 2 * d > q else d


def decode_offset(d: int, q: int) -> int:
    # |d| < q/4  <=>  4|d| < q, no float rounding
    return 0 if 4 * abs(d) < q else 1


def decrypt_bit(sk, ct: Ciphertext) -> int:
    ct.validate(sk.params.q)
    return decode_offset(decryption_offset(sk, ct), sk.params.q)


def message_bits(message: bytes) -> list:
    return [(byte >> (7 - i)) & 1 for byte in message for i in range(8)]


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    if len(bits) % 8:
        raise DomainError(f"{len(bits)} bits is not a whole number of bytes")
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for b in bits[i:i + 8]:
            byte = (byte << 1) | b
        out.append(byte)
    return bytes(out)


def encrypt_bytes(pk, message: bytes, encryption_seed) -> list:
    """One ciphertext per bit, MSB first; r is redrawn per bit from one stream."""
    stream = CoefficientStream(encryption_seed)
    return [encrypt_bit_from_stream(pk, bit, stream) for bit in message_bits(message)]


def decrypt_bytes(sk, cts: Sequence[Ciphertext]) -> bytes:
    return bits_to_bytes([decrypt_bit(sk, ct) for ct in cts])
