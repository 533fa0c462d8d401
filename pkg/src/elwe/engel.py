"""Engel expansions, logistic-map index shuffling and the coefficient stream.

Everything here runs on exact integers. Seeds are :class:`fractions.Fraction`
values in ]0, 1]; an Engel state ``x_i`` is carried as an unreduced pair
``(p_i, q)`` so each recursion step costs one big-integer division.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from math import gcd, isqrt
from typing import Iterator, Optional, Sequence

from .errors import ConfigurationError, DomainError

Rational = Fraction

MAX_SEED_DIGITS = 10_000
# Reseeded and shuffle states are floored onto this dyadic grid once their
# reduced denominator grows past it; the logistic map squares denominators.
CHAIN_PRECISION_BITS = 256

_SEED_RE = re.compile(r"^\s*(?:(\d+)(?:\.(\d+))?|(\d+)\s*/\s*(\d+))\s*$")


def parse_seed(text: str) -> Fraction:
    """Parse ``"0.d1d2..."`` or ``"p/q"`` into an exact seed in ]0, 1]."""
    if isinstance(text, Fraction):
        seed = text
    else:
        m = _SEED_RE.match(str(text))
        if m is None:
            raise DomainError(f"unparseable seed {text!r}")
        if m.group(2) is not None and len(m.group(2)) > MAX_SEED_DIGITS:
            raise DomainError(f"seed has more than {MAX_SEED_DIGITS} digits")
        if m.group(4) is not None and int(m.group(4)) == 0:
            raise DomainError("seed denominator is zero")
        seed = Fraction(text.strip().replace(" ", ""))
    if not 0 < seed <= 1:
        raise DomainError(f"seed {seed} outside ]0,1]")
    return seed


def seed_to_str(seed: Fraction) -> str:
    return f"{seed.numerator}/{seed.denominator}"


@dataclass(frozen=True)
class EngelSequence:
    seed: Fraction
    coefficients: tuple
    terminated: bool

    def partial_sum(self, terms: Optional[int] = None) -> Fraction:
        return engel_sum(self.coefficients[:terms])


def engel_sum(coefficients: Sequence[int]) -> Fraction:
    """Sum 1/a1 + 1/(a1 a2) + ... exactly."""
    total = Fraction(0)
    prod = 1
    for a in coefficients:
        prod *= a
        total += Fraction(1, prod)
    return total


def engel_expand(seed, max_terms: int) -> EngelSequence:
    """Expand ``seed`` with a_i = ceil(1/x_i), x_{i+1} = a_i x_i - 1.

    Stops when the state hits zero or after ``max_terms`` coefficients.
    """
    seed = parse_seed(seed)
    if max_terms < 1:
        raise DomainError("max_terms must be >= 1")
    p, q = seed.numerator, seed.denominator
    coeffs = []
    while len(coeffs) < max_terms:
        a = -(-q // p)
        coeffs.append(a)
        p = a * p - q
        if p == 0:
            return EngelSequence(seed, tuple(coeffs), True)
    return EngelSequence(seed, tuple(coeffs), False)


# -- logistic map -----------------------------------------------------------

def _logistic(num: int, den: int, bits: Optional[int]) -> tuple:
    n2 = 4 * num * (den - num)
    d2 = den * den
    g = gcd(n2, d2)
    if g > 1:
        n2 //= g
        d2 //= g
    if bits is not None and d2 > (1 << bits):
        n2 = (n2 << bits) // d2
        d2 = 1 << bits
    return n2, d2


def _quantize(num: int, den: int, bits: int) -> tuple:
    g = gcd(num, den)
    num, den = num // g, den // g
    if den > (1 << bits):
        return (num << bits) // den, 1 << bits
    return num, den


@dataclass(frozen=True)
class ShuffleState:
    """Logistic-map state ``x`` in [0, 1] and the index bound ``N``.

    ``precision_bits`` set means each step is floored onto a 2**-bits grid
    whenever the exact value needs a larger denominator; ``None`` keeps the
    orbit exact (denominators square every step, so only for short runs).
    """

    x: Fraction
    N: int
    precision_bits: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.x <= 1:
            raise DomainError(f"logistic state {self.x} outside [0,1]")
        if self.N < 1:
            raise DomainError("N must be positive")


def logistic_orbit(state: ShuffleState, count: int) -> tuple:
    """Return ``(indices, next_state)`` after ``count`` logistic steps."""
    if count < 1:
        raise DomainError("count must be >= 1")
    num, den = state.x.numerator, state.x.denominator
    out = []
    for _ in range(count):
        out.append(state.N * num // den)
        num, den = _logistic(num, den, state.precision_bits)
    return out, ShuffleState(Fraction(num, den), state.N, state.precision_bits)


def logistic_indices(state: ShuffleState, count: int) -> list:
    """Indices j_k = floor(N x_k) along x_{k+1} = 4 x_k (1 - x_k)."""
    return logistic_orbit(state, count)[0]


def shuffle_coefficients(coefficients: Sequence[int], state: ShuffleState) -> list:
    """Swap position i with j_i for i = 1..N (1-based; j = 0 is a self-swap)."""
    out = list(coefficients)
    if not out:
        raise DomainError("cannot shuffle an empty sequence")
    if state.N != len(out):
        raise ConfigurationError(f"shuffle bound N={state.N} != length {len(out)}")
    _apply_swaps(out, logistic_indices(state, len(out)))
    return out


def _apply_swaps(items: list, indices: Sequence[int]) -> None:
    for i, j in enumerate(indices, start=1):
        if j >= 1:
            items[i - 1], items[j - 1] = items[j - 1], items[i - 1]


# -- unbounded coefficient stream --------------------------------------------

def _golden_offset(bits: int) -> int:
    # floor(2**bits * (sqrt(5) - 1) / 2)
    return (isqrt(5 << (2 * bits)) - (1 << bits)) // 2


_GOLDEN = _golden_offset(CHAIN_PRECISION_BITS)


def _golden_shift(num: int, den: int) -> tuple:
    one = 1 << CHAIN_PRECISION_BITS
    n2 = num * one + _GOLDEN * den
    d2 = den * one
    return _quantize(n2 % d2, d2, CHAIN_PRECISION_BITS)


def next_seed(seed: Fraction) -> Fraction:
    """Successor seed used when an expansion ends or overflows.

    One logistic step on the current expansion seed, floored to
    ``CHAIN_PRECISION_BITS`` if needed. A result of 0 or a fixed point
    is pushed off by adding the golden-ratio conjugate mod 1.
    """
    num, den = _logistic(seed.numerator, seed.denominator, CHAIN_PRECISION_BITS)
    if num == 0 or num * seed.denominator == seed.numerator * den:
        num, den = _golden_shift(num, den)
    return Fraction(num, den)


def _is_stuck(x: Fraction) -> bool:
    return x in (0, 1, Fraction(3, 4))


class CoefficientStream:
    """Deterministic, never-ending supply of Engel coefficients.

    The stream expands its seed; when an expansion terminates or would emit a
    coefficient wider than ``max_coefficient_bits``, it moves to
    :func:`next_seed` of the current expansion seed and keeps going.
    Coefficients are emitted in blocks of ``block_size``, each block permuted
    by :func:`shuffle_coefficients` driven by a logistic orbit that starts at
    the (quantized) seed and continues across blocks.

    Not thread-safe: one owner per stream.
    """

    def __init__(self, seed, block_size: int = 64, max_coefficient_bits: int = 64,
                 shuffle: bool = True):
        if block_size < 1 or max_coefficient_bits < 1:
            raise ConfigurationError("block_size and max_coefficient_bits must be positive")
        self.seed = parse_seed(seed)
        self.block_size = block_size
        self.max_coefficient_bits = max_coefficient_bits
        self.shuffle = shuffle
        self.cursor = 0
        self.reseeds = 0
        self._raw = self._raw_coefficients()
        self._buffer: deque = deque()
        sx, sd = _quantize(self.seed.numerator, self.seed.denominator,
                           CHAIN_PRECISION_BITS)
        self._shuffle_x = Fraction(sx, sd)

    def _raw_coefficients(self) -> Iterator[int]:
        limit = self.max_coefficient_bits
        current = self.seed
        while True:
            p, q = current.numerator, current.denominator
            while p:
                a = -(-q // p)
                if a.bit_length() > limit:
                    break
                p = a * p - q
                yield a
            current = next_seed(current)
            self.reseeds += 1

    def _fill(self) -> None:
        block = [next(self._raw) for _ in range(self.block_size)]
        if self.shuffle:
            if _is_stuck(self._shuffle_x):
                x = self._shuffle_x
                self._shuffle_x = Fraction(*_golden_shift(x.numerator, x.denominator))
            state = ShuffleState(self._shuffle_x, self.block_size, CHAIN_PRECISION_BITS)
            indices, nxt = logistic_orbit(state, self.block_size)
            _apply_swaps(block, indices)
            self._shuffle_x = nxt.x
        self._buffer.extend(block)

    def next(self, count: int) -> list:
        if count < 1:
            raise DomainError("count must be >= 1")
        while len(self._buffer) < count:
            self._fill()
        out = [self._buffer.popleft() for _ in range(count)]
        self.cursor += count
        return out

    def __iter__(self):
        while True:
            yield self.next(1)[0]


def stream_next(stream: CoefficientStream, count: int) -> list:
    return stream.next(count)
