"""Evaluation metrics for price predictions and the per-horizon report.

All metrics operate on pooled (predicted, actual) pairs in Rs/quintal.
Note the R2 definition used here: the denominator is the variance of the
*predicted* values, matching the reporting convention of this pipeline's
result tables; ``r2(pairs, conventional=True)`` gives the textbook variant
with the variance of the actuals instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HORIZONS = (4, 6, 9, 15, 30)

REPORT_HEADER = ["horizon_days", "rmse", "mae", "cov_percent", "r2", "pearson"]


class MetricError(ValueError):
    pass


@dataclass
class EvalPairs:
    """Aligned predicted/actual price vectors; finite, equal, nonempty."""

    predicted: np.ndarray
    actual: np.ndarray

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.actual = np.asarray(self.actual, dtype=np.float64)
        if self.predicted.ndim != 1 or self.actual.ndim != 1:
            raise MetricError("predicted and actual must be 1-D")
        if len(self.predicted) != len(self.actual):
            raise MetricError(
                f"length mismatch: {len(self.predicted)} predicted vs {len(self.actual)} actual"
            )
        if len(self.predicted) == 0:
            raise MetricError("empty evaluation pairs")
        if not (np.all(np.isfinite(self.predicted)) and np.all(np.isfinite(self.actual))):
            raise MetricError("non-finite value in evaluation pairs")

    def __len__(self) -> int:
        return len(self.predicted)


def mae(pairs: EvalPairs) -> float:
    return float(np.mean(np.abs(pairs.predicted - pairs.actual)))


def rmse(pairs: EvalPairs) -> float:
    return float(np.sqrt(np.mean((pairs.predicted - pairs.actual) ** 2)))


def cov(pairs: EvalPairs) -> float:
    """RMSE over the mean actual price, in percent."""
    x_bar = float(np.mean(pairs.actual))
    if x_bar == 0.0:
        raise MetricError("coefficient of variation undefined: mean actual price is zero")
    return 100.0 * rmse(pairs) / x_bar


def r2(pairs: EvalPairs, conventional: bool = False) -> float:
    y, x = pairs.predicted, pairs.actual
    residual = float(np.sum((y - x) ** 2))
    if conventional:
        denom = float(np.sum((x - x.mean()) ** 2))
    else:
        denom = float(np.sum((y - y.mean()) ** 2))
    if denom == 0.0:
        raise MetricError("R2 undefined: zero variance in the denominator")
    return 1.0 - residual / denom


def pearson(pairs: EvalPairs) -> float:
    y, x = pairs.predicted, pairs.actual
    xd, yd = x - x.mean(), y - y.mean()
    sx = math.sqrt(float(np.sum(xd ** 2)))
    sy = math.sqrt(float(np.sum(yd ** 2)))
    if sx == 0.0 or sy == 0.0:
        raise MetricError("Pearson undefined: zero variance")
    return float(np.sum(xd * yd)) / (sx * sy)


@dataclass(frozen=True)
class MetricRow:
    rmse: float
    mae: float
    cov_percent: float
    r2: float
    pearson: float


@dataclass
class EvalReport:
    """Five metrics per horizon (days), pooled over mandis and test slices."""

    rows: dict[int, MetricRow]


def evaluate_pairs(pairs: EvalPairs) -> MetricRow:
    return MetricRow(
        rmse=rmse(pairs),
        mae=mae(pairs),
        cov_percent=cov(pairs),
        r2=r2(pairs),
        pearson=pearson(pairs),
    )


def build_report(pairs_by_horizon: dict[int, EvalPairs]) -> EvalReport:
    if not pairs_by_horizon:
        raise MetricError("no horizons to report")
    return EvalReport({n: evaluate_pairs(p) for n, p in sorted(pairs_by_horizon.items())})


def write_report_csv(path: str | Path, report: EvalReport) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for n in sorted(report.rows):
            r = report.rows[n]
            writer.writerow([n, repr(r.rmse), repr(r.mae), repr(r.cov_percent), repr(r.r2), repr(r.pearson)])


def read_report_csv(path: str | Path) -> EvalReport:
    rows = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != REPORT_HEADER:
            raise MetricError(f"bad report header: {header}")
        for n, *vals in reader:
            rows[int(n)] = MetricRow(*(float(v) for v in vals))
    return EvalReport(rows)
