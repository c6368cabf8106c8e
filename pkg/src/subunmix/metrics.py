"""Error metrics over Monte Carlo trials: FWER, NDP and FDP."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .linalg import InvalidArgumentError

RESULTS_COLUMNS = (
    "n", "D", "d", "N", "sigma", "alpha", "c1",
    "trials", "fwer", "fwer_se", "ndp_mean", "fdp_mean",
)


@dataclass(frozen=True)
class TrialRecord:
    true_active: frozenset[int]
    estimated_active: frozenset[int]

    @property
    def false_positive(self) -> bool:
        return not self.estimated_active <= self.true_active


@dataclass(frozen=True)
class BatchSummary:
    fwer_hat: float
    ndp_mean: float
    fdp_mean: float
    trials: int
    binomial_se: float


def binomial_se(p: float, trials: int) -> float:
    return math.sqrt(p * (1 - p) / trials)


def fwer_estimate(records: Sequence[TrialRecord]) -> tuple[float, float]:
    """Fraction of trials with at least one false positive, and its binomial SE."""
    if not records:
        raise InvalidArgumentError("no trial records")
    p = sum(r.false_positive for r in records) / len(records)
    return p, binomial_se(p, len(records))


def ndp(record: TrialRecord) -> float:
    """Fraction of the truly active subspaces that were missed."""
    if not record.true_active:
        raise InvalidArgumentError("NDP is undefined for an empty active set")
    return len(record.true_active - record.estimated_active) / len(record.true_active)


def fdp(record: TrialRecord) -> float:
    """Fraction of declared-active subspaces that are inactive; 0 if none declared."""
    if not record.estimated_active:
        return 0.0
    return len(record.estimated_active - record.true_active) / len(record.estimated_active)


def summarize(records: Sequence[TrialRecord]) -> BatchSummary:
    fwer, se = fwer_estimate(records)
    T = len(records)
    return BatchSummary(
        fwer_hat=fwer,
        ndp_mean=sum(ndp(r) for r in records) / T,
        fdp_mean=sum(fdp(r) for r in records) / T,
        trials=T,
        binomial_se=se,
    )


def results_row(summary: BatchSummary, *, n, D, d, N, sigma, alpha, c1) -> str:
    values = (
        n, D, d, N, repr(float(sigma)), repr(float(alpha)), repr(float(c1)),
        summary.trials, repr(summary.fwer_hat), repr(summary.binomial_se),
        repr(summary.ndp_mean), repr(summary.fdp_mean),
    )
    return ",".join(str(v) for v in values)


def read_results(lines: Iterable[str]) -> list[dict[str, float]]:
    """Parse a results CSV (``#`` lines skipped) into one dict per row."""
    rows = []
    header = None
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if header is None:
            header = parts
            continue
        rows.append({k: float(v) for k, v in zip(header, parts)})
    return rows
