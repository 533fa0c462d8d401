"""Epoch-numbered LWE key pairs with rotation by age or request count."""

from __future__ import annotations

import threading
from collections import OrderedDict
from fractions import Fraction

from ..engel import next_seed, parse_seed
from ..errors import DomainError
from ..lwe import KeyPair, LweParams, keygen

DAY_MS = 24 * 3600 * 1000


class KeyRing:
    """Current key plus ``keep`` previous epochs for in-flight requests.

    Epoch k's seed is next_seed applied k times to the base seed, so any
    holder of (params, base seed) can regenerate every epoch's key.
    """

    def __init__(self, params: LweParams, seed, rotate_after_ms: int = DAY_MS,
                 rotate_after_requests: int = 1000, keep: int = 1, now_ms: int = 0):
        if rotate_after_ms < 1 or rotate_after_requests < 1:
            raise DomainError("rotation thresholds must be positive")
        self.params = params
        self.rotate_after_ms = rotate_after_ms
        self.rotate_after_requests = rotate_after_requests
        self.keep = keep
        self._lock = threading.Lock()
        self._seed: Fraction = parse_seed(seed)
        self._epoch = 0
        self._since_ms = now_ms
        self._requests = 0
        self._keys: OrderedDict = OrderedDict({0: keygen(params, self._seed)})

    @property
    def epoch(self) -> int:
        return self._epoch

    def current(self) -> KeyPair:
        return self._keys[self._epoch]

    def get(self, epoch: int) -> KeyPair:
        try:
            return self._keys[epoch]
        except KeyError:
            raise DomainError(f"key epoch {epoch} is not available") from None

    def note_request(self, now_ms: int) -> int:
        """Count one request and rotate if a threshold is reached; return the epoch."""
        with self._lock:
            self._requests += 1
            if (self._requests >= self.rotate_after_requests
                    or now_ms - self._since_ms >= self.rotate_after_ms):
                self._rotate(now_ms)
            return self._epoch

    def rotate(self, now_ms: int = 0) -> int:
        with self._lock:
            self._rotate(now_ms)
            return self._epoch

    def _rotate(self, now_ms: int) -> None:
        self._seed = next_seed(self._seed)
        self._epoch += 1
        self._keys[self._epoch] = keygen(self.params, self._seed)
        while len(self._keys) > self.keep + 1:
            self._keys.popitem(last=False)
        self._since_ms = now_ms
        self._requests = 0


def epoch_keypair(params: LweParams, seed, epoch: int) -> KeyPair:
    s = parse_seed(seed)
    for _ in range(epoch):
        s = next_seed(s)
    return keygen(params, s)
