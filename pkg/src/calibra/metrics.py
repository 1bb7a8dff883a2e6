"""Calibration error metrics and confidence-distribution curves.

Implements bucketed expected calibration error, instance-level calibration
errors for the correct/incorrect classes and their macro average, the
over-confidence gap, per-row wins counting, and histogram/KDE exports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Optional, Sequence

import numpy as np

from .qa import EvalRecord, accuracy

DegenerateFlag = Literal["none", "no_correct", "no_incorrect"]

DEFAULT_NUM_BUCKETS = 10


@dataclass
class Bucket:
    """One equal-width confidence bucket with its members' statistics."""

    index: int
    lower: float
    upper: float
    member_ids: list[str] = field(default_factory=list)
    avg_confidence: float = 0.0
    accuracy: float = 0.0

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass
class CalibrationSummary:
    """All calibration numbers for one set of records under one method."""

    ece: float
    ice_pos: float
    ice_neg: float
    macro_ce: float
    n: int
    n_pos: int
    n_neg: int
    avg_confidence: float
    accuracy: float
    buckets: list[Bucket]
    degenerate_flag: DegenerateFlag = "none"

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "ice_pos": None if math.isnan(self.ice_pos) else self.ice_pos,
            "ice_neg": None if math.isnan(self.ice_neg) else self.ice_neg,
            "macro_ce": self.macro_ce,
            "n": self.n,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "avg_confidence": self.avg_confidence,
            "accuracy": self.accuracy,
            "degenerate_flag": self.degenerate_flag,
            "buckets": [
                {
                    "index": b.index,
                    "lower": b.lower,
                    "upper": b.upper,
                    "member_ids": list(b.member_ids),
                    "avg_confidence": b.avg_confidence,
                    "accuracy": b.accuracy,
                }
                for b in self.buckets
            ],
        }


@dataclass
class DistributionCurve:
    """Histogram or KDE density points for a confidence distribution."""

    points: list[tuple[float, float]]
    bandwidth: float
    kind: Literal["histogram", "kde"]
    fallback_bandwidth: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bandwidth": self.bandwidth,
            "fallback_bandwidth": self.fallback_bandwidth,
            "points": [[x, d] for x, d in self.points],
        }


def bucket_index(confidence: float, num_buckets: int) -> int:
    """Bucket m covers [m/M, (m+1)/M); the last bucket is closed at 1.0."""
    if confidence >= 1.0:
        return num_buckets - 1
    return int(confidence * num_buckets)


def bucketize(
    confidences: Sequence[tuple[str, float]],
    num_buckets: int,
    correct: Optional[Mapping[str, bool]] = None,
) -> list[Bucket]:
    """Assign (id, confidence) pairs to equal-width buckets over [0, 1].

    Empty buckets are retained with zeroed statistics. Out-of-range
    confidences are rejected with the offending record named.
    """
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    buckets = [
        Bucket(index=m, lower=m / num_buckets, upper=(m + 1) / num_buckets)
        for m in range(num_buckets)
    ]
    members: list[list[float]] = [[] for _ in range(num_buckets)]
    for item_id, conf in confidences:
        if not 0.0 <= conf <= 1.0:
            raise ValueError(
                f"confidence {conf} for record {item_id!r} is outside [0, 1]; "
                "enable clamping or fix the input"
            )
        m = bucket_index(conf, num_buckets)
        buckets[m].member_ids.append(item_id)
        members[m].append(conf)
    for bucket, confs in zip(buckets, members):
        if confs:
            bucket.avg_confidence = math.fsum(confs) / len(confs)
            if correct is not None:
                hits = sum(1 for i in bucket.member_ids if correct[i])
                bucket.accuracy = hits / len(bucket.member_ids)
    return buckets


def _pairs(records: Sequence[EvalRecord], method: str) -> list[tuple[str, float]]:
    if not records:
        raise ValueError("at least one record required")
    return [(r.item_id, r.confidence(method)) for r in records]


def ece(records: Sequence[EvalRecord], method: str, num_buckets: int = DEFAULT_NUM_BUCKETS) -> float:
    """Bucket-weighted mean absolute gap between accuracy and confidence."""
    pairs = _pairs(records, method)
    correct = {r.item_id: r.correct for r in records}
    buckets = bucketize(pairs, num_buckets, correct=correct)
    n = len(records)
    # weighting by size/n keeps the single-bucket case bitwise equal to
    # |avg_conf - accuracy| (the weight is exactly 1.0)
    return math.fsum(b.size / n * abs(b.accuracy - b.avg_confidence) for b in buckets)


def ice_pos(records: Sequence[EvalRecord], method: str) -> float:
    """Mean confidence shortfall (1 - conf) over the correct records."""
    positives = [r for r in records if r.correct]
    if not positives:
        raise ValueError("ice_pos requires at least one correct record")
    return math.fsum(1.0 - r.confidence(method) for r in positives) / len(positives)


def ice_neg(records: Sequence[EvalRecord], method: str) -> float:
    """Mean confidence excess over the incorrect records."""
    negatives = [r for r in records if not r.correct]
    if not negatives:
        raise ValueError("ice_neg requires at least one incorrect record")
    return math.fsum(r.confidence(method) for r in negatives) / len(negatives)


def macro_ce(records: Sequence[EvalRecord], method: str) -> tuple[float, DegenerateFlag]:
    """Macro average of ice_pos and ice_neg.

    With one class empty, returns the other ICE plus a degeneracy flag
    instead of silently reporting zero.
    """
    if not records:
        raise ValueError("at least one record required")
    has_pos = any(r.correct for r in records)
    has_neg = any(not r.correct for r in records)
    if has_pos and has_neg:
        return (ice_pos(records, method) + ice_neg(records, method)) / 2.0, "none"
    if has_pos:
        return ice_pos(records, method), "no_incorrect"
    return ice_neg(records, method), "no_correct"


def confidence_gap(records: Sequence[EvalRecord], method: str) -> tuple[float, float, float]:
    """(average confidence, accuracy, gap); a positive gap means over-confidence."""
    if not records:
        raise ValueError("at least one record required")
    avg_conf = math.fsum(r.confidence(method) for r in records) / len(records)
    acc = accuracy(records)
    return avg_conf, acc, avg_conf - acc


def summarize(
    records: Sequence[EvalRecord],
    method: str,
    num_buckets: int = DEFAULT_NUM_BUCKETS,
) -> CalibrationSummary:
    """Compute the full calibration summary for one extraction method."""
    pairs = _pairs(records, method)
    correct = {r.item_id: r.correct for r in records}
    buckets = bucketize(pairs, num_buckets, correct=correct)
    n = len(records)
    n_pos = sum(1 for r in records if r.correct)
    n_neg = n - n_pos
    ece_value = math.fsum(b.size * abs(b.accuracy - b.avg_confidence) for b in buckets) / n
    mce, flag = macro_ce(records, method)
    pos = ice_pos(records, method) if n_pos else float("nan")
    neg = ice_neg(records, method) if n_neg else float("nan")
    avg_conf, acc, _ = confidence_gap(records, method)
    return CalibrationSummary(
        ece=ece_value,
        ice_pos=pos,
        ice_neg=neg,
        macro_ce=mce,
        n=n,
        n_pos=n_pos,
        n_neg=n_neg,
        avg_confidence=avg_conf,
        accuracy=acc,
        buckets=buckets,
        degenerate_flag=flag,
    )


def wins_table(error_rows: Iterable[Mapping[str, float]]) -> dict[str, int]:
    """Count, per column, the rows where that column has the strictly lowest error.

    Rows must share an identical key set. A tied minimum awards no win.
    """
    rows = list(error_rows)
    if not rows:
        raise ValueError("wins_table requires at least one row")
    keys = sorted(rows[0])
    wins = {k: 0 for k in keys}
    for row in rows:
        if sorted(row) != keys:
            raise ValueError("wins_table rows must share the same columns")
        best = min(row.values())
        winners = [k for k in keys if row[k] == best]
        if len(winners) == 1:
            wins[winners[0]] += 1
    return wins


def silverman_bandwidth(samples: np.ndarray) -> float:
    """Silverman's rule of thumb: 0.9 * min(sigma, IQR / 1.34) * n^(-1/5)."""
    n = samples.size
    sigma = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = float(q75 - q25)
    scale = min(s for s in (sigma, iqr / 1.34) if s > 0) if (sigma > 0 or iqr > 0) else 0.0
    if scale == 0.0:
        return 0.0
    return 0.9 * scale * n ** (-1 / 5)


def distribution_curve(
    confidences: Sequence[float],
    kind: Literal["histogram", "kde"] = "kde",
    grid_size: int = 256,
) -> DistributionCurve:
    """Density curve of a confidence sample.

    Histogram mode returns normalized densities over equal-width buckets.
    KDE mode uses a Gaussian kernel with Silverman bandwidth, evaluated on
    an even grid over [0, 1] padded by five bandwidths on each side so the
    curve integrates to one. Degenerate samples (a single distinct value)
    fall back to a fixed 0.05 bandwidth, flagged on the curve.
    """
    if not confidences:
        raise ValueError("at least one confidence required")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    samples = np.asarray(confidences, dtype=float)
    if kind == "histogram":
        counts, edges = np.histogram(samples, bins=grid_size, range=(0.0, 1.0), density=True)
        centers = (edges[:-1] + edges[1:]) / 2.0
        points = [(float(x), float(d)) for x, d in zip(centers, counts)]
        return DistributionCurve(points=points, bandwidth=1.0 / grid_size, kind="histogram")
    h = silverman_bandwidth(samples)
    fallback = h == 0.0
    if fallback:
        h = 0.05
    pad = 5.0 * h
    grid = np.linspace(0.0 - pad, 1.0 + pad, grid_size)
    diffs = (grid[:, None] - samples[None, :]) / h
    density = np.exp(-0.5 * diffs**2).sum(axis=1) / (samples.size * h * math.sqrt(2 * math.pi))
    points = [(float(x), float(d)) for x, d in zip(grid, density)]
    return DistributionCurve(points=points, bandwidth=h, kind="kde", fallback_bandwidth=fallback)
