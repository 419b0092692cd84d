"""Sample statistics for run summaries."""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence


def nearest_rank(samples: Sequence[float], p: float) -> Optional[float]:
    """The ``p``-th percentile (0 < p <= 100) by nearest rank, no interpolation."""
    if not samples:
        return None
    if not 0 < p <= 100:
        raise ValueError("percentile must be in (0, 100]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def latency_summary(samples_ms: Sequence[float]) -> Dict[str, Optional[float]]:
    if not samples_ms:
        return {"n": 0, "mean": None, "p50": None, "p95": None, "p99": None}
    return {
        "n": len(samples_ms),
        "mean": sum(samples_ms) / len(samples_ms),
        "p50": nearest_rank(samples_ms, 50),
        "p95": nearest_rank(samples_ms, 95),
        "p99": nearest_rank(samples_ms, 99),
    }


def rounded(value, digits: int = 6):
    """Recursively round floats so summaries serialise identically everywhere."""
    if isinstance(value, float):
        r = round(value, digits)
        return 0.0 if r == 0 else r
    if isinstance(value, dict):
        return {k: rounded(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [rounded(v, digits) for v in value]
    return value
