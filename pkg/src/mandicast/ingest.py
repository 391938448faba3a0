"""Parsing and validation of raw mandi price/arrival and weather CSV files.

File schemas (all UTF-8 with a header row):

* prices:  ``mandi_id,crop,date,min_price,max_price,modal_price,arrival``
  with dates ``YYYY-MM-DD``, prices in Rs/quintal, arrivals in tonnes and
  empty string meaning "missing".  Min/max prices are validated but not
  retained; only the modal price is modeled.
* weather: ``mandi_id,timestamp,temperature,precipitation,solar_radiation,humidity``
  with ISO-8601 hourly timestamps, no missing cells and no gaps per mandi.
* mandis:  ``mandi_id,name,latitude,longitude``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

PRICE_HEADER = ["mandi_id", "crop", "date", "min_price", "max_price", "modal_price", "arrival"]
WEATHER_HEADER = ["mandi_id", "timestamp", "temperature", "precipitation", "solar_radiation", "humidity"]
MANDI_HEADER = ["mandi_id", "name", "latitude", "longitude"]

#: weather channel order used everywhere downstream (CNN towers, exports)
WEATHER_CHANNELS = ("temperature", "precipitation", "solar_radiation", "humidity")


class ParseError(ValueError):
    """Malformed input file; ``row`` is the 1-based line number (header = 1)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class MandiMeta:
    """One market: opaque id, display name and geographic position."""

    mandi_id: str
    name: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of [-90, 90] for mandi {self.mandi_id}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of [-180, 180] for mandi {self.mandi_id}")


@dataclass(frozen=True)
class RawPriceRecord:
    """One (mandi, crop, day) market report; None marks a missing cell."""

    mandi_id: str
    crop: str
    date: date
    modal_price: float | None
    arrival: float | None


@dataclass
class WeatherSeries:
    """Hourly weather for one mandi: 4 aligned channels, no missing values."""

    mandi_id: str
    start: datetime
    data: np.ndarray  # shape (4, hours), channel order per WEATHER_CHANNELS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != len(WEATHER_CHANNELS):
            raise ValueError(f"weather data must be (4, hours), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"non-finite weather value for mandi {self.mandi_id}")

    @property
    def hours(self) -> int:
        return self.data.shape[1]

    def hour_index(self, when: datetime) -> int:
        delta = when - self.start
        hours = delta / timedelta(hours=1)
        idx = int(round(hours))
        if abs(hours - idx) > 1e-9:
            raise ValueError(f"timestamp {when} is not on the hourly grid of mandi {self.mandi_id}")
        return idx


def _read_rows(path: str | Path, expected_header: list[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != expected_header:
            raise ParseError(f"{path}: bad header {header}, expected {expected_header}", row=1)
        yield from ((i, row) for i, row in enumerate(reader, start=2))


def _float_or_missing(cell: str, what: str, row: int) -> float | None:
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"unparsable {what} {cell!r}", row=row) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite {what} {cell!r}", row=row)
    return value


def parse_price_csv(path: str | Path) -> list[RawPriceRecord]:
    """Parse a price/arrival CSV into records, in file order.

    Empty cells become None (never zero).  Raises ParseError for malformed
    rows (with the offending line number) and for duplicate
    (mandi, crop, date) keys.
    """
    records: list[RawPriceRecord] = []
    seen: set[tuple[str, str, date]] = set()
    for i, row in _read_rows(path, PRICE_HEADER):
        if len(row) != len(PRICE_HEADER):
            raise ParseError(f"expected {len(PRICE_HEADER)} columns, got {len(row)}", row=i)
        mandi_id, crop, date_s, min_s, max_s, modal_s, arrival_s = row
        if not mandi_id or not crop:
            raise ParseError("empty mandi_id or crop", row=i)
        try:
            day = date.fromisoformat(date_s)
        except ValueError:
            raise ParseError(f"unparsable date {date_s!r}", row=i) from None
        # min/max prices are schema-valid but not modeled; parse for validation only
        _float_or_missing(min_s, "min_price", i)
        _float_or_missing(max_s, "max_price", i)
        modal = _float_or_missing(modal_s, "modal_price", i)
        arrival = _float_or_missing(arrival_s, "arrival", i)
        if modal is not None and modal < 0:
            raise ParseError(f"negative modal_price {modal}", row=i)
        if arrival is not None and arrival < 0:
            raise ParseError(f"negative arrival {arrival}", row=i)
        key = (mandi_id, crop, day)
        if key in seen:
            raise ParseError(f"duplicate record for (mandi={mandi_id}, crop={crop}, date={day})", row=i)
        seen.add(key)
        records.append(RawPriceRecord(mandi_id, crop, day, modal, arrival))
    return records


def write_price_csv(path: str | Path, records: list[RawPriceRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICE_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.mandi_id,
                    r.crop,
                    r.date.isoformat(),
                    "",
                    "",
                    "" if r.modal_price is None else repr(r.modal_price),
                    "" if r.arrival is None else repr(r.arrival),
                ]
            )


def _parse_hour(cell: str, row: int) -> datetime:
    try:
        ts = datetime.fromisoformat(cell)
    except ValueError:
        raise ParseError(f"unparsable timestamp {cell!r}", row=row) from None
    if ts.minute or ts.second or ts.microsecond or ts.tzinfo is not None:
        raise ParseError(f"timestamp {cell!r} not at naive hour resolution", row=row)
    return ts


def parse_weather_csv(path: str | Path) -> list[WeatherSeries]:
    """Parse hourly weather into one WeatherSeries per mandi (first-seen order).

    The source is assumed pre-cleaned: a missing cell, a duplicated hour or
    a gap in any mandi's hourly sequence is an error naming the mandi and
    timestamp.
    """
    order: list[str] = []
    starts: dict[str, datetime] = {}
    last: dict[str, datetime] = {}
    chans: dict[str, list[list[float]]] = {}
    for i, row in _read_rows(path, WEATHER_HEADER):
        if len(row) != len(WEATHER_HEADER):
            raise ParseError(f"expected {len(WEATHER_HEADER)} columns, got {len(row)}", row=i)
        mandi_id, ts_s = row[0], row[1]
        if not mandi_id:
            raise ParseError("empty mandi_id", row=i)
        ts = _parse_hour(ts_s, i)
        values = []
        for name, cell in zip(WEATHER_CHANNELS, row[2:]):
            if cell == "":
                raise ParseError(f"missing {name} for mandi {mandi_id} at {ts.isoformat()}", row=i)
            values.append(_float_or_missing(cell, name, i))
        if mandi_id not in starts:
            order.append(mandi_id)
            starts[mandi_id] = ts
            chans[mandi_id] = [[] for _ in WEATHER_CHANNELS]
        else:
            expected = last[mandi_id] + timedelta(hours=1)
            if ts == last[mandi_id]:
                raise ParseError(f"duplicate hour {ts.isoformat()} for mandi {mandi_id}", row=i)
            if ts != expected:
                raise ParseError(
                    f"gap for mandi {mandi_id}: expected {expected.isoformat()}, got {ts.isoformat()}",
                    row=i,
                )
        last[mandi_id] = ts
        for channel, value in zip(chans[mandi_id], values):
            channel.append(value)
    return [WeatherSeries(m, starts[m], np.array(chans[m], dtype=np.float64)) for m in order]


def write_weather_csv(path: str | Path, series: list[WeatherSeries], fmt: str = "%.4f") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_HEADER)
        for s in series:
            for h in range(s.hours):
                ts = s.start + timedelta(hours=h)
                writer.writerow([s.mandi_id, ts.isoformat(timespec="minutes")] + [fmt % v for v in s.data[:, h]])


def parse_mandi_csv(path: str | Path) -> list[MandiMeta]:
    """Parse mandi metadata; ids must be unique, coordinates in bounds."""
    mandis: list[MandiMeta] = []
    seen: set[str] = set()
    for i, row in _read_rows(path, MANDI_HEADER):
        if len(row) != len(MANDI_HEADER):
            raise ParseError(f"expected {len(MANDI_HEADER)} columns, got {len(row)}", row=i)
        mandi_id, name, lat_s, lon_s = row
        if mandi_id in seen:
            raise ParseError(f"duplicate mandi_id {mandi_id}", row=i)
        seen.add(mandi_id)
        lat = _float_or_missing(lat_s, "latitude", i)
        lon = _float_or_missing(lon_s, "longitude", i)
        if lat is None or lon is None:
            raise ParseError("missing coordinate", row=i)
        try:
            mandis.append(MandiMeta(mandi_id, name, lat, lon))
        except ValueError as exc:
            raise ParseError(str(exc), row=i) from None
    return mandis


def write_mandi_csv(path: str | Path, mandis: list[MandiMeta]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANDI_HEADER)
        for m in mandis:
            writer.writerow([m.mandi_id, m.name, repr(m.latitude), repr(m.longitude)])


def shortlist_mandis(records: list[RawPriceRecord], crop: str, years: range) -> set[str]:
    """Mandis with >= 4 days carrying BOTH price and arrival in every year.

    The rule is evaluated per crop over the given year range; an empty
    result is valid.
    """
    if len(years) == 0:
        raise ValueError("years range is empty")
    counts: dict[str, dict[int, set[date]]] = {}
    for r in records:
        if r.crop != crop or r.modal_price is None or r.arrival is None:
            continue
        if r.date.year in years:
            counts.setdefault(r.mandi_id, {}).setdefault(r.date.year, set()).add(r.date)
    result = set()
    for mandi_id, by_year in counts.items():
        if all(len(by_year.get(y, ())) >= 4 for y in years):
            result.add(mandi_id)
    return result
