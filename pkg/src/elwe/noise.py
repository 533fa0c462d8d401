"""Noise samplers and the divergence statistics used to compare them."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .engel import CoefficientStream, next_seed, parse_seed, seed_to_str
from .errors import DomainError
from .lwe import LweParams, _draw_matrix, centered_errors

DEFAULT_BINS = 64
DEFAULT_PER_CELL = 300
PHI_BITS = 128
# floor(2**128 * phi); frac(i*phi) is then exact to ~2**-128 * i
_PHI_FIXED = (isqrt(5 << (2 * PHI_BITS)) + (1 << PHI_BITS)) // 2
_STD_NORMAL = NormalDist()


class Generator(str, enum.Enum):
    GAUSSIAN = "gaussian"
    ENGEL_DIFF = "engel_diff"
    ENGEL_PHI = "engel_phi"


@dataclass(frozen=True)
class NoiseBatch:
    samples: np.ndarray = field(repr=False)
    generator: Generator
    sigma: float
    seed: str

    def __post_init__(self):
        if len(self.samples) == 0:
            raise DomainError("noise batch must be non-empty")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class DivergenceReport:
    wasserstein: float
    kl: float
    bins: int
    sample_count: int
    params: tuple
    truncated: bool = False
    error: Optional[str] = None


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")


def _check_count(count: int) -> None:
    if count < 1:
        raise DomainError("count must be >= 1")


def sample_gaussian(sigma: float, count: int, rng_seed: int) -> NoiseBatch:
    _check_sigma(sigma)
    _check_count(count)
    rng = np.random.default_rng(rng_seed)
    return NoiseBatch(rng.normal(0.0, sigma, count), Generator.GAUSSIAN, sigma, str(rng_seed))


def golden_fractions(count: int, start: int = 1) -> np.ndarray:
    """frac(i * phi) for i = start .. start+count-1, via 128-bit fixed point."""
    one = 1 << PHI_BITS
    return np.array([((i * _PHI_FIXED) % one) / one for i in range(start, start + count)])


def normal_quantile(u: float) -> float:
    """Standard normal inverse CDF."""
    if not 0 < u < 1:
        raise DomainError(f"quantile argument {u} outside (0, 1)")
    return _STD_NORMAL.inv_cdf(u)


def sample_engel_phi_block(sigma: float, count: int, start: int) -> np.ndarray:
    return sigma * np.array([_STD_NORMAL.inv_cdf(u) for u in golden_fractions(count, start)])


def sample_engel_phi(sigma: float, count: int) -> NoiseBatch:
    """e_i = sigma * inverse_normal_cdf(frac(i * phi)), i = 1..count."""
    _check_sigma(sigma)
    _check_count(count)
    samples = sample_engel_phi_block(sigma, count, 1)
    return NoiseBatch(samples, Generator.ENGEL_PHI, sigma, "phi")


def engel_diff_errors(stream: CoefficientStream, n: int, bound: int, count: int) -> np.ndarray:
    """``count`` centered errors in [-bound, bound], drawn n at a time."""
    out = []
    while len(out) < count:
        out.extend(centered_errors(stream.next(n), bound))
    return np.array(out[:count], dtype=np.int64)


def sample_engel_diff(params: LweParams, seed, count: int) -> NoiseBatch:
    """Errors along the keygen path: the first n values equal keygen's e."""
    _check_count(count)
    seed = parse_seed(seed)
    stream = CoefficientStream(seed)
    _draw_matrix(stream, params)
    stream.next(params.n)
    samples = engel_diff_errors(stream, params.n, params.noise_bound, count)
    return NoiseBatch(samples, Generator.ENGEL_DIFF, params.sigma, seed_to_str(seed))


# -- metrics -----------------------------------------------------------------

def _as_array(xs, name: str) -> np.ndarray:
    arr = np.asarray(xs, dtype=float)
    if arr.size == 0:
        raise DomainError(f"{name} is empty")
    return arr


def wasserstein_1d(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Exact W1 between two empirical 1-D distributions.

    Equal lengths reduce to the mean absolute difference of sorted samples.
    Unequal lengths integrate |F - G| over the merged support.
    """
    x = np.sort(_as_array(xs, "xs"))
    y = np.sort(_as_array(ys, "ys"))
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    grid = np.sort(np.concatenate([x, y]))
    widths = np.diff(grid)
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(fx - fy) * widths))


def kl_from_masses(p: Sequence[float], q: Sequence[float]) -> float:
    """sum p_i ln(p_i / q_i) for normalized masses; 0 * ln 0 counts as 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.size == 0:
        raise DomainError("mass vectors must be non-empty and equally long")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_divergence(xs: Sequence[float], ys: Sequence[float], bins: int = DEFAULT_BINS) -> float:
    """KL(P || Q) in nats over a shared histogram with add-one smoothing."""
    if bins < 2:
        raise DomainError("bins must be >= 2")
    x = _as_array(xs, "xs")
    y = _as_array(ys, "ys")
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi == lo:
        hi = lo + 1.0
    cx, _ = np.histogram(x, bins=bins, range=(lo, hi))
    cy, _ = np.histogram(y, bins=bins, range=(lo, hi))
    p = (cx + 1) / (x.size + bins)
    q = (cy + 1) / (y.size + bins)
    return max(0.0, kl_from_masses(p, q))


def ks_statistic(xs: Sequence[float], sigma: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance of the sample to N(0, sigma^2)."""
    x = np.sort(_as_array(xs, "xs"))
    dist = NormalDist(0.0, sigma)
    cdf = np.array([dist.cdf(v) for v in x])
    n = x.size
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def compare(xs, ys, bins: int = DEFAULT_BINS, params: tuple = ()) -> DivergenceReport:
    x = _as_array(xs, "xs")
    y = _as_array(ys, "ys")
    return DivergenceReport(wasserstein_1d(x, y), kl_divergence(x, y, bins), bins,
                            min(x.size, y.size), params, truncated=x.size != y.size)


# -- ciphertext-population sweep ----------------------------------------------

def _rng_seed(seed: Fraction) -> int:
    digest = hashlib.sha256(seed_to_str(seed).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class SweepCell:
    n: int
    q: int
    sigma: float


def cell_populations(cell: SweepCell, encryptions: int, seed, p: int = 13,
                     engel: Generator = Generator.ENGEL_DIFF) -> tuple:
    """c2 populations for m = 0 under Gaussian and under Engel noise.

    One (A, s) per cell, a fresh binary r and a fresh error vector per
    encryption. Both populations share A, s and every r, so they differ
    only through the noise: c2 = (A s + e) . r mod q.
    """
    n, q = cell.n, cell.q
    seed = parse_seed(seed)
    key_stream = CoefficientStream(seed)
    A = np.array([a % p for a in key_stream.next(n * n)], dtype=np.int64).reshape(n, n)
    s = np.array([a % q for a in key_stream.next(n)], dtype=np.int64)
    As = (A @ s) % q
    r_stream = CoefficientStream(next_seed(seed))
    rng = np.random.default_rng(_rng_seed(seed))
    bound = max(1, math.floor(3 * cell.sigma))
    gauss, eng = [], []
    for k in range(encryptions):
        r = np.array([a & 1 for a in r_stream.next(n)], dtype=np.int64)
        e_g = np.rint(rng.normal(0.0, cell.sigma, n)).astype(np.int64)
        if engel is Generator.ENGEL_DIFF:
            e_e = np.array(centered_errors(key_stream.next(n), bound), dtype=np.int64)
        elif engel is Generator.ENGEL_PHI:
            e_e = np.rint(sample_engel_phi_block(cell.sigma, n, 1 + k * n)).astype(np.int64)
        else:
            e_e = np.rint(rng.normal(0.0, cell.sigma, n)).astype(np.int64)
        base = int(As @ r)
        gauss.append((base + int(e_g @ r)) % q)
        eng.append((base + int(e_e @ r)) % q)
    return np.array(gauss, dtype=float), np.array(eng, dtype=float)


def divergence_sweep(ns: Sequence[int], qs: Sequence[int], sigmas: Sequence[float],
                     encryptions_per_cell: int = DEFAULT_PER_CELL, seed="0.5772156649",
                     bins: int = DEFAULT_BINS,
                     engel: Generator = Generator.ENGEL_DIFF) -> list:
    """One DivergenceReport per (n, q, sigma) cell in row-major grid order."""
    if not ns or not qs or not sigmas:
        raise DomainError("sweep grid must be non-empty")
    if encryptions_per_cell < 1:
        raise DomainError("encryptions_per_cell must be >= 1")
    reports = []
    for n in ns:
        for q in qs:
            for sigma in sigmas:
                params = (n, q, float(sigma))
                try:
                    if n < 2 or q < 2 or not sigma > 0:
                        raise DomainError(f"invalid cell {params}")
                    g, e = cell_populations(SweepCell(n, q, float(sigma)),
                                            encryptions_per_cell, seed, engel=engel)
                    reports.append(compare(g, e, bins, params))
                except (DomainError, ValueError) as exc:
                    reports.append(DivergenceReport(math.nan, math.nan, bins, 0, params,
                                                    error=str(exc)))
    return reports


def sweep_csv(reports: Sequence[DivergenceReport]) -> str:
    lines = ["n,q,sigma,wasserstein,kl,sample_count"]
    for r in reports:
        n, q, sigma = r.params
        lines.append(f"{n},{q},{sigma:g},{r.wasserstein:.6f},{r.kl:.6f},{r.sample_count}")
    return "\n".join(lines) + "\n"


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation (no ties expected)."""
    rx = np.argsort(np.argsort(xs)).astype(float)
    ry = np.argsort(np.argsort(ys)).astype(float)
    if rx.std() == 0 or ry.std() == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])
