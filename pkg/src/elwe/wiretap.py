"""Gaussian wiretap secure rates and an adversarial-noise transmission simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engel import CoefficientStream, next_seed, parse_seed
from .errors import DomainError
from .lwe import LweParams, decrypt_bit, encrypt_bit_from_stream, keygen


@dataclass(frozen=True)
class ChannelPoint:
    snr_main_db: float
    snr_eve_db: float
    delta_db: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.snr_main_db) and math.isfinite(self.snr_eve_db)
                and math.isfinite(self.delta_db)):
            raise DomainError("SNR and delta values must be finite")
        if self.delta_db < 0:
            raise DomainError(f"delta_db must be >= 0, got {self.delta_db}")

    @property
    def snr_eve_eff_db(self) -> float:
        return self.snr_eve_db - self.delta_db


@dataclass(frozen=True)
class SecureRatePoint:
    point: ChannelPoint
    rate: float


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def awgn_capacity(snr_linear: float) -> float:
    return 0.5 * math.log2(1.0 + snr_linear)


def secure_rate(point: ChannelPoint) -> SecureRatePoint:
    """max(0, C(main) - C(eve - delta)) in bits per channel use."""
    if point.snr_eve_eff_db >= point.snr_main_db:
        return SecureRatePoint(point, 0.0)
    rate = (awgn_capacity(db_to_linear(point.snr_main_db))
            - awgn_capacity(db_to_linear(point.snr_eve_eff_db)))
    return SecureRatePoint(point, max(0.0, rate))


def security_region(main_grid: Sequence[float], eve_grid: Sequence[float],
                    delta_grid: Sequence[float]) -> list:
    """Cartesian product, delta outermost, then main, then eve."""
    if not main_grid or not eve_grid or not delta_grid:
        raise DomainError("grids must be non-empty")
    return [secure_rate(ChannelPoint(m, e, d))
            for d in delta_grid for m in main_grid for e in eve_grid]


def region_csv(points: Sequence[SecureRatePoint]) -> str:
    lines = ["main_db,eve_db,delta_db,rate"]
    for sp in points:
        p = sp.point
        lines.append(f"{p.snr_main_db:g},{p.snr_eve_db:g},{p.delta_db:g},{sp.rate:.9f}")
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> list:
    """``"0:20:1"`` (inclusive start:stop:step) or ``"0,4,8"``."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0 or stop < start:
                raise DomainError(f"bad range {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(count)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise DomainError(f"bad grid {text!r}") from None


def epsilon_security_check(sigma_main: float, sigma_eve: float, delta: float) -> bool:
    """True iff sigma_eve^2 > sigma_main^2 + delta."""
    if not (sigma_main > 0 and sigma_eve > 0 and delta > 0):
        raise DomainError("sigma_main, sigma_eve and delta must be positive")
    return sigma_eve * sigma_eve > sigma_main * sigma_main + delta


# -- transmission simulator -------------------------------------------------------

@dataclass(frozen=True)
class ItsReport:
    mode: str
    trials: int
    accepted: int
    rejected: int
    errors: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.accepted if self.accepted else 0.0

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.trials

    def to_json(self) -> dict:
        return {"mode": self.mode, "trials": self.trials, "accepted": self.accepted,
                "rejected": self.rejected, "errors": self.errors,
                "error_rate": self.error_rate, "rejection_rate": self.rejection_rate}


def its_sim(n: int, q: int, sigma: float, adv_sigma: float, trials: int,
            mode: str = "categorical", seed="0.4142135623", p: int = 13,
            sigma_eve: Optional[float] = None, delta: float = 1.0,
            rng_seed: int = 0) -> ItsReport:
    """Encrypt random bits, perturb c2 with N(0, adv_sigma^2), decrypt.

    Each transmission's main-channel noise is sigma_B^2 = sigma^2 + a^2 for
    the realized perturbation a. Categorical mode rejects it when
    epsilon_security_check(sigma_B, sigma_eve, delta) fails; traditional
    mode accepts everything. ``sigma_eve`` defaults to 4 * sigma.
    """
    if mode not in ("categorical", "traditional"):
        raise DomainError(f"unknown mode {mode!r}")
    if trials < 1 or not adv_sigma >= 0:
        raise DomainError("trials must be >= 1 and adv_sigma >= 0")
    sigma_eve = 4.0 * sigma if sigma_eve is None else sigma_eve
    seed = parse_seed(seed)
    kp = keygen(LweParams(n, q, p, sigma), seed)
    enc_stream = CoefficientStream(next_seed(seed))
    bits = [a & 1 for a in CoefficientStream(next_seed(next_seed(seed))).next(trials)]
    rng = np.random.default_rng(rng_seed)
    perturb = np.rint(rng.normal(0.0, adv_sigma, trials)).astype(np.int64) \
        if adv_sigma > 0 else np.zeros(trials, dtype=np.int64)

    accepted = rejected = errors = 0
    for bit, a in zip(bits, perturb):
        a = int(a)
        ct = encrypt_bit_from_stream(kp.public, bit, enc_stream)
        if mode == "categorical":
            sigma_b = math.sqrt(sigma * sigma + a * a)
            if not epsilon_security_check(sigma_b, sigma_eve, delta):
                rejected += 1
                continue
        noisy = type(ct)(ct.c1, (ct.c2 + a) % q)
        accepted += 1
        errors += decrypt_bit(kp.secret, noisy) != bit
    return ItsReport(mode, trials, accepted, rejected, errors)
