"""Cleaning pipeline for sparse daily market series.

Stages, in the order applied by :func:`curate_series`:

1. misreport flagging — a reported value more than six times above, or
   below a sixth of, the mean of the previous week's surviving
   observations is demoted to missing (typical cause: an extra or a
   dropped digit at data entry);
2. year-wise natural cubic-spline imputation, only for years with more
   than half their calendar days observed;
3. a +/-15% moving-window check (7 days each side) that demotes spline
   fills sitting outside the window's observed extrema;
4. linear interpolation of everything still missing, with constant
   extension at the series ends;
5. removal of Sundays (markets are closed).

Every value carries a provenance tag so later stages can distinguish
ground truth from fills.  All functions are pure: they return new series
and never mutate their input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline


class Tag(IntEnum):
    OBSERVED = 0
    MISSING = 1
    IMPUTED_SPLINE = 2
    IMPUTED_LINEAR = 3


#: spline imputation requires observed coverage above this fraction of the
#: year's calendar days
SPLINE_COVERAGE_THRESHOLD = 0.5

MISREPORT_FACTOR = 6.0
WINDOW_HALF = 7            # days on each side of the 14-day outlier window
WINDOW_BAND = 0.15         # +/-15% around the window's observed extrema


class CurationError(ValueError):
    pass


@dataclass(frozen=True)
class FlagEvent:
    """One demotion, for the audit log: which rule fired on which value."""

    mandi_id: str
    crop: str
    date: date
    rule: str  # "misreport" | "spline_window"
    original_value: float


@dataclass
class ObservedSeries:
    """One mandi x crop daily series with per-value provenance tags.

    ``dates`` must be strictly increasing; before Sunday removal it is also
    gap-free (one entry per calendar day).  ``values`` holds NaN wherever
    the tag is MISSING.
    """

    mandi_id: str
    crop: str
    dates: list[date]
    values: np.ndarray
    tags: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.tags is None:
            self.tags = np.where(np.isnan(self.values), Tag.MISSING, Tag.OBSERVED).astype(np.int8)
        self.tags = np.asarray(self.tags, dtype=np.int8)
        if not (len(self.dates) == len(self.values) == len(self.tags)):
            raise ValueError("dates, values and tags must have equal length")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise ValueError(f"dates not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.dates)

    def copy(self) -> "ObservedSeries":
        return replace(self, dates=list(self.dates), values=self.values.copy(), tags=self.tags.copy())

    def missing_count(self) -> int:
        return int(np.sum(self.tags == Tag.MISSING))

    def index_of(self, day: date) -> int:
        i = np.searchsorted(np.array(self.dates, dtype=object), day)
        if i >= len(self.dates) or self.dates[i] != day:
            raise KeyError(f"date {day} not in series {self.mandi_id}/{self.crop}")
        return int(i)


def series_from_records(records, mandi_id: str, crop: str, start: date, end: date,
                        field_name: str = "modal_price") -> ObservedSeries:
    """Build a gap-free daily series over [start, end] from parsed records.

    Days without a record (or with an empty cell) are tagged missing.
    ``field_name`` selects modal_price or arrival.
    """
    if end < start:
        raise ValueError("end before start")
    n = (end - start).days + 1
    values = np.full(n, np.nan)
    for r in records:
        if r.mandi_id != mandi_id or r.crop != crop:
            continue
        if start <= r.date <= end:
            v = getattr(r, field_name)
            if v is not None:
                values[(r.date - start).days] = v
    dates = [start + timedelta(days=i) for i in range(n)]
    return ObservedSeries(mandi_id, crop, dates, values)


def flag_misreports(series: ObservedSeries, audit: list[FlagEvent] | None = None) -> ObservedSeries:
    """Demote observed values outside [mu/6, 6*mu] of the prior week's mean.

    The scan is chronological and works on surviving observations: once a
    value is flagged it no longer contributes to later reference means.
    When the previous 7 days hold no observation, the most recent earlier
    surviving value is used instead; the first observed value of a series
    is never flagged.
    """
    out = series.copy()
    alive = out.tags == Tag.OBSERVED
    for i in np.flatnonzero(alive):
        lo = max(0, i - WINDOW_HALF)
        window = np.flatnonzero(alive[lo:i]) + lo
        if window.size:
            mu = float(out.values[window].mean())
        else:
            earlier = np.flatnonzero(alive[:i])
            if earlier.size == 0:
                continue  # first surviving observation: nothing to compare against
            mu = float(out.values[earlier[-1]])
        v = float(out.values[i])
        if v > MISREPORT_FACTOR * mu or v < mu / MISREPORT_FACTOR:
            alive[i] = False
            out.tags[i] = Tag.MISSING
            out.values[i] = np.nan
            if audit is not None:
                audit.append(FlagEvent(out.mandi_id, out.crop, out.dates[i], "misreport", v))
    return out


def year_coverage(series: ObservedSeries, year: int) -> float:
    """Observed-day count for ``year`` divided by the year's calendar days."""
    year_days = (date(year, 12, 31) - date(year, 1, 1)).days + 1
    in_year = np.array([d.year == year for d in series.dates])
    observed = np.sum(in_year & (series.tags == Tag.OBSERVED))
    return float(observed) / year_days


def spline_eligible_years(series: ObservedSeries) -> list[int]:
    years = sorted({d.year for d in series.dates})
    return [y for y in years if year_coverage(series, y) > SPLINE_COVERAGE_THRESHOLD]


def year_spline(series: ObservedSeries, year: int):
    """Natural cubic spline through the year's observed points.

    Returns ``(spline, first_index, last_index)`` where the indices bound
    the year's observed span within the series.  Interpolation only; the
    spline must not be evaluated outside that span.
    """
    in_year = np.array([d.year == year for d in series.dates])
    obs = np.flatnonzero(in_year & (series.tags == Tag.OBSERVED))
    if year_coverage(series, year) <= SPLINE_COVERAGE_THRESHOLD:
        raise CurationError(
            f"coverage below threshold for {series.mandi_id}/{series.crop} in {year}"
        )
    if obs.size < 4:
        raise CurationError(f"need >= 4 observed points in {year}, got {obs.size}")
    spline = CubicSpline(obs.astype(np.float64), series.values[obs], bc_type="natural")
    return spline, int(obs[0]), int(obs[-1])


def spline_impute_yearwise(series: ObservedSeries, year: int) -> ObservedSeries:
    """Fill the year's interior missing values with a natural cubic spline.

    Only gaps strictly between the year's first and last observed dates are
    filled (no extrapolation).  Raises CurationError when the year's
    observed coverage is at or below the threshold.
    """
    spline, first, last = year_spline(series, year)
    out = series.copy()
    gaps = np.flatnonzero(out.tags == Tag.MISSING)
    gaps = gaps[(gaps > first) & (gaps < last)]
    if gaps.size:
        out.values[gaps] = spline(gaps.astype(np.float64))
        out.tags[gaps] = Tag.IMPUTED_SPLINE
    return out


def _outlier_window(observed: np.ndarray, i: int) -> np.ndarray:
    """Indices of observed values for the +/-15% check around position i.

    Starts with 7 days each side (excluding i); if that window holds no
    observation it grows symmetrically one day at a time until each side
    still within the series has one, stopping at the series ends.
    """
    n = observed.size
    half = WINDOW_HALF
    lo, hi = max(0, i - half), min(n - 1, i + half)
    idx = np.flatnonzero(observed[lo:hi + 1]) + lo
    idx = idx[idx != i]
    if idx.size:
        return idx
    left_found = right_found = False
    while True:
        half += 1
        lo, hi = i - half, i + half
        if lo >= 0 and observed[lo]:
            left_found = True
        if hi <= n - 1 and observed[hi]:
            right_found = True
        left_done = left_found or lo <= 0
        right_done = right_found or hi >= n - 1
        if left_done and right_done:
            break
    lo, hi = max(0, i - half), min(n - 1, i + half)
    idx = np.flatnonzero(observed[lo:hi + 1]) + lo
    return idx[idx != i]


def flag_spline_outliers(series: ObservedSeries, audit: list[FlagEvent] | None = None) -> ObservedSeries:
    """Demote spline fills outside +/-15% of their window's observed extrema."""
    out = series.copy()
    observed = out.tags == Tag.OBSERVED
    for i in np.flatnonzero(out.tags == Tag.IMPUTED_SPLINE):
        idx = _outlier_window(observed, int(i))
        if idx.size == 0:
            continue  # series without any observation elsewhere: nothing to compare
        window = out.values[idx]
        m, big = float(window.min()), float(window.max())
        v = float(out.values[i])
        if v > (1.0 + WINDOW_BAND) * big or v < (1.0 - WINDOW_BAND) * m:
            out.tags[i] = Tag.MISSING
            out.values[i] = np.nan
            if audit is not None:
                audit.append(FlagEvent(out.mandi_id, out.crop, out.dates[i], "spline_window", v))
    return out


def linear_interpolate(series: ObservedSeries) -> ObservedSeries:
    """Fill all remaining gaps linearly; series ends extend constantly."""
    out = series.copy()
    known = out.tags != Tag.MISSING
    if not known.any():
        raise CurationError(f"series {series.mandi_id}/{series.crop} has no values at all")
    gaps = np.flatnonzero(~known)
    if gaps.size:
        x = np.arange(len(out), dtype=np.float64)
        out.values[gaps] = np.interp(x[gaps], x[known], out.values[known])
        out.tags[gaps] = Tag.IMPUTED_LINEAR
    return out


def drop_sundays(series: ObservedSeries) -> ObservedSeries:
    """Remove Sunday entries, preserving the order of the rest."""
    keep = [i for i, d in enumerate(series.dates) if d.weekday() != 6]
    return ObservedSeries(
        series.mandi_id,
        series.crop,
        [series.dates[i] for i in keep],
        series.values[keep],
        series.tags[keep],
    )


def curate_series(series: ObservedSeries, audit: list[FlagEvent] | None = None) -> ObservedSeries:
    """Run the full cleaning pipeline; result is gap-free over non-Sundays."""
    out = flag_misreports(series, audit)
    for year in spline_eligible_years(out):
        out = spline_impute_yearwise(out, year)
    if np.any(out.tags == Tag.IMPUTED_SPLINE):
        out = flag_spline_outliers(out, audit)
    out = linear_interpolate(out)
    return drop_sundays(out)


def write_audit_csv(path: str | Path, events: list[FlagEvent]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mandi_id", "crop", "date", "rule", "original_value"])
        for e in events:
            writer.writerow([e.mandi_id, e.crop, e.date.isoformat(), e.rule, repr(e.original_value)])


def write_series_csv(path: str | Path, series_list: list[ObservedSeries], kinds: list[str]) -> None:
    """Persist curated series (one row per day) for downstream stages."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mandi_id", "crop", "kind", "date", "value", "tag"])
        for s, kind in zip(series_list, kinds):
            for d, v, t in zip(s.dates, s.values, s.tags):
                writer.writerow([s.mandi_id, s.crop, kind, d.isoformat(), repr(float(v)), Tag(t).name])


def read_series_csv(path: str | Path) -> dict[tuple[str, str, str], ObservedSeries]:
    """Inverse of write_series_csv, keyed by (mandi_id, crop, kind)."""
    rows: dict[tuple[str, str, str], list[tuple[date, float, int]]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["mandi_id", "crop", "kind", "date", "value", "tag"]:
            raise CurationError(f"bad series file header: {header}")
        for mandi_id, crop, kind, d, v, t in reader:
            rows.setdefault((mandi_id, crop, kind), []).append(
                (date.fromisoformat(d), float(v), Tag[t])
            )
    out = {}
    for key, entries in rows.items():
        dates = [e[0] for e in entries]
        values = np.array([e[1] for e in entries])
        tags = np.array([e[2] for e in entries], dtype=np.int8)
        out[key] = ObservedSeries(key[0], key[1], dates, values, tags)
    return out
