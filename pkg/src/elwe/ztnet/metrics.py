"""Counters, latency reservoirs and the summary-statistics report."""

from __future__ import annotations

import threading
from collections import Counter, defaultdict
from typing import Mapping, Sequence

import numpy as np

from .policy import Decision, Reason

COMPONENTS = ("encrypt", "decrypt", "network", "model", "total")
PERCENTILES = (5, 25, 50, 75, 95)


class MetricsLedger:
    """Accepts concurrent updates; totals are exact once writers are quiet."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reasons: Counter = Counter()
        self.decision_latency_us: dict = defaultdict(list)
        self.bytes_by_reason: Counter = Counter()
        self.components: dict = defaultdict(list)
        self.cache_hits = 0
        self.cache_misses = 0
        self.reconnect_attempts = 0
        self.reconnect_successes = 0
        self.ground_truth_mismatches = 0

    def record_decision(self, decision: Decision) -> None:
        with self._lock:
            self.reasons[decision.reason.value] += 1
            self.decision_latency_us[decision.reason.value].append(decision.latency_us)
            self.bytes_by_reason[decision.reason.value] += decision.bytes_processed

    def record_component(self, name: str, value_ms: float) -> None:
        with self._lock:
            self.components[name].append(float(value_ms))

    def record_cache(self, hit: bool) -> None:
        with self._lock:
            if hit:
                self.cache_hits += 1
            else:
                self.cache_misses += 1

    def record_reconnect(self, attempts: int, succeeded: bool) -> None:
        with self._lock:
            self.reconnect_attempts += attempts
            self.reconnect_successes += int(succeeded and attempts > 0)

    @property
    def total(self) -> int:
        return sum(self.reasons.values())

    @property
    def accepted(self) -> int:
        return self.reasons.get(Reason.OK.value, 0)

    @property
    def rejected(self) -> int:
        return self.total - self.accepted

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.total if self.total else 0.0

    def to_json(self) -> dict:
        per_reason = {}
        for reason in sorted(self.reasons):
            lat = self.decision_latency_us[reason]
            per_reason[reason] = {
                "count": self.reasons[reason],
                "avg_latency_ms": float(np.mean(lat)) / 1000.0,
                "max_latency_ms": float(np.max(lat)) / 1000.0,
                "data_processed_kb": self.bytes_by_reason[reason] / 1024.0,
            }
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "rejection_rate": self.rejection_rate,
            "per_reason": per_reason,
            "cache": {"hits": self.cache_hits, "misses": self.cache_misses},
            "reconnect": {"attempts": self.reconnect_attempts,
                          "successes": self.reconnect_successes},
            "ground_truth_mismatches": self.ground_truth_mismatches,
            "components": {k: list(v) for k, v in sorted(self.components.items())},
        }

    def counts_json(self) -> dict:
        """Only the deterministic parts of the ledger (no wall-clock latencies)."""
        return {"total": self.total, "accepted": self.accepted, "rejected": self.rejected,
                "rejection_rate": self.rejection_rate,
                "ground_truth_mismatches": self.ground_truth_mismatches,
                "per_reason": {k: self.reasons[k] for k in sorted(self.reasons)},
                "bytes_by_reason": {k: self.bytes_by_reason[k]
                                    for k in sorted(self.bytes_by_reason)}}


def summary_stats(values: Sequence[float]) -> dict:
    """Mean, std (n-1), min, max, p5..p95, IQR and CV.

    Percentiles interpolate linearly between order statistics placed at
    (i - 0.5)/n, so [1..100] has median 50.5 and IQR exactly 50.
    """
    x = np.asarray(values, dtype=float)
    constant = x.min() == x.max()
    mean = float(x[0]) if constant else float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 and not constant else 0.0
    pct = np.percentile(x, PERCENTILES, method="hazen")
    out = {"count": int(x.size), "mean": mean, "std": std,
           "min": float(x.min()), "max": float(x.max())}
    for p, v in zip(PERCENTILES, pct):
        out[f"p{p}"] = float(v)
    out["iqr"] = out["p75"] - out["p25"]
    out["cv"] = std / mean if mean else 0.0
    return out


def metrics_report(ledger, components: Sequence[str] = COMPONENTS) -> dict:
    """Per-component statistics; empty components are listed under ``omitted``."""
    source: Mapping = ledger.components if isinstance(ledger, MetricsLedger) else ledger
    report, omitted = {}, []
    for name in components:
        values = source.get(name, [])
        if len(values) == 0:
            omitted.append(name)
        else:
            report[name] = summary_stats(values)
    return {"components": report, "omitted": omitted}
